// Fit a mean-field posterior to the two-point dataset at a few widths and
// compare the predictive mean against the prior and the bound on its distance.

#include <cstdio>

#include "mfbnn/mfbnn.hpp"

int main() {
    using namespace mfbnn;
    const Dataset ds = make_two_points();
    const auto lik = LikelihoodSpec::gaussian(ds.noise_sigma2);

    Matrix grid(5, 1);
    grid << -1, -0.5, 0, 0.5, 1;

    std::printf("%6s %10s %10s %10s %10s\n", "M", "KL", "max|gap|", "KL bound", "mean bound");
    for (int M : {16, 128, 1024}) {
        Architecture a;
        a.depth = 1;
        a.width = M;
        a.activation = ActivationSpec::make(ActivationKind::tanh);

        TrainConfig cfg;
        cfg.steps = 2000;
        cfg.seed = 1;
        const auto fit = train(a, ds, lik, cfg);

        Rng rng(2);
        const auto gap = crn_mean_difference(fit.q, MeanFieldGaussian::prior(a), a, grid, 500, rng);
        const auto kb = kl_bound_empirical(ds, a, ds.noise_sigma2, 500, rng);
        const double bound = mean_bound_1hl({M, 1, 1, 1.0, kb.estimate, 0.0}).value;
        std::printf("%6d %10.3f %10.4f %10.3f %10.4f\n", M, kl_to_standard_normal(fit.q),
                    gap.diff.cwiseAbs().maxCoeff(), kb.estimate, bound);
    }

    // NNGP reference at the data
    Architecture a;
    a.depth = 1;
    a.activation = ActivationSpec::make(ActivationKind::tanh);
    const auto K = nngp_kernel(a, ds.X);
    std::printf("NNGP kernel at the data:\n%8.4f %8.4f\n%8.4f %8.4f\n", K.entries(0, 0), K.entries(0, 1),
                K.entries(1, 0), K.entries(1, 1));
}
