#pragma once

#include "mfbnn/activation.hpp"
#include "mfbnn/bounds.hpp"
#include "mfbnn/checks.hpp"
#include "mfbnn/counterexample.hpp"
#include "mfbnn/data.hpp"
#include "mfbnn/error.hpp"
#include "mfbnn/mfvi.hpp"
#include "mfbnn/net.hpp"
#include "mfbnn/nngp.hpp"
#include "mfbnn/quadrature.hpp"
#include "mfbnn/rng.hpp"
#include "mfbnn/stats.hpp"
#include "mfbnn/svg.hpp"
