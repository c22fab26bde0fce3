#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mfbnn/error.hpp"
#include "mfbnn/rng.hpp"

namespace mfbnn {

/// Per-column affine transform recorded by standardize_split; raw = z * std + mean.
struct Standardization {
    bool applied = false;
    Eigen::VectorXd x_mean, x_std;
    double y_mean = 0.0;
    double y_std = 1.0;
};

struct Dataset {
    Eigen::MatrixXd X;  // N x d_in
    Eigen::VectorXd y;  // N
    std::string name;
    double noise_sigma2 = 0.025;
    Standardization standardization;

    Eigen::Index size() const { return X.rows(); }
    Eigen::Index dim() const { return X.cols(); }
    bool empty() const { return X.rows() == 0; }

    Dataset subset(const std::vector<Eigen::Index>& rows) const {
        Dataset out;
        out.name = name;
        out.noise_sigma2 = noise_sigma2;
        out.standardization = standardization;
        out.X.resize(static_cast<Eigen::Index>(rows.size()), X.cols());
        out.y.resize(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            out.X.row(static_cast<Eigen::Index>(i)) = X.row(rows[i]);
            out.y[static_cast<Eigen::Index>(i)] = y[rows[i]];
        }
        return out;
    }
};

inline Dataset make_dataset(Eigen::MatrixXd X, Eigen::VectorXd y, std::string name,
                            double noise_sigma2 = 0.025) {
    if (X.rows() != y.size()) throw ShapeError("dataset: X and y row counts differ");
    if (!(noise_sigma2 > 0.0)) throw DomainError("dataset: noise variance must be positive");
    Dataset d;
    d.X = std::move(X);
    d.y = std::move(y);
    d.name = std::move(name);
    d.noise_sigma2 = noise_sigma2;
    return d;
}

/// (-1, -1) and (1, 1) with noise variance 0.025.
inline Dataset make_two_points() {
    Eigen::MatrixXd X(2, 1);
    X << -1.0, 1.0;
    Eigen::VectorXd y(2);
    y << -1.0, 1.0;
    return make_dataset(std::move(X), std::move(y), "two_points", 0.025);
}

/// y = sin(x) + eps, x ~ U(-5, 5), eps ~ N(0, 0.025). Not standardized.
inline Dataset make_sine(Eigen::Index n, Rng& rng) {
    if (n < 1) throw DomainError("make_sine: N must be >= 1");
    std::uniform_real_distribution<double> ux(-5.0, 5.0);
    std::normal_distribution<double> noise(0.0, std::sqrt(0.025));
    Eigen::MatrixXd X(n, 1);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        X(i, 0) = ux(rng);
        y[i] = std::sin(X(i, 0)) + noise(rng);
    }
    return make_dataset(std::move(X), std::move(y), "sine", 0.025);
}

/// y = x_0 sin(x_1) + eps with both inputs ~ U(-5, 5). Not standardized.
inline Dataset make_toy(Eigen::Index n, Rng& rng) {
    if (n < 1) throw DomainError("make_toy: N must be >= 1");
    std::uniform_real_distribution<double> ux(-5.0, 5.0);
    std::normal_distribution<double> noise(0.0, std::sqrt(0.025));
    Eigen::MatrixXd X(n, 2);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        X(i, 0) = ux(rng);
        X(i, 1) = ux(rng);
        y[i] = X(i, 0) * std::sin(X(i, 1)) + noise(rng);
    }
    return make_dataset(std::move(X), std::move(y), "toy", 0.025);
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

inline std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r\n\"");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n\"");
    return s.substr(first, last - first + 1);
}

inline std::optional<double> parse_double(const std::string& s) {
    if (s.empty()) return std::nullopt;
    std::size_t used = 0;
    try {
        const double v = std::stod(s, &used);
        if (used != s.size() || !std::isfinite(v)) return std::nullopt;
        return v;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

}  // namespace detail

/// Reads a numeric CSV with a header row. `target` names the response column
/// (or a 0-based index written as a decimal string). Columns listed in `drop`
/// are ignored; everything else becomes a feature, in file order.
inline Dataset load_uci_csv(const std::string& path, const std::string& target,
                            const std::vector<std::string>& drop = {},
                            double noise_sigma2 = 0.025) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty file '" + path + "'");
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // BOM
    std::vector<std::string> header = detail::split_csv_line(line);
    for (auto& h : header) h = detail::trim(h);

    auto find_column = [&](const std::string& name) -> std::optional<std::size_t> {
        for (std::size_t c = 0; c < header.size(); ++c)
            if (header[c] == name) return c;
        if (auto idx = detail::parse_double(name); idx && *idx >= 0 && *idx == std::floor(*idx) &&
                                                   static_cast<std::size_t>(*idx) < header.size())
            return static_cast<std::size_t>(*idx);
        return std::nullopt;
    };
    const auto target_col = find_column(target);
    if (!target_col) throw DataError("target column '" + target + "' not found in header");
    std::vector<bool> is_feature(header.size(), true);
    is_feature[*target_col] = false;
    for (const auto& d : drop) {
        const auto c = find_column(d);
        if (!c) throw DataError("drop column '" + d + "' not found in header");
        is_feature[*c] = false;
    }
    const auto n_features = std::count(is_feature.begin(), is_feature.end(), true);

    std::vector<std::vector<double>> rows;
    std::vector<double> ys;
    std::size_t file_row = 1;
    while (std::getline(in, line)) {
        ++file_row;
        if (detail::trim(line).empty()) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw DataError("expected " + std::to_string(header.size()) + " columns, found " +
                                std::to_string(cells.size()),
                            file_row);
        std::vector<double> feats;
        feats.reserve(static_cast<std::size_t>(n_features));
        double yv = 0.0;
        for (std::size_t c = 0; c < cells.size(); ++c) {
            const auto v = detail::parse_double(detail::trim(cells[c]));
            if (c == *target_col || is_feature[c]) {
                if (!v) throw DataError("non-numeric cell '" + cells[c] + "'", file_row, c + 1);
                if (c == *target_col)
                    yv = *v;
                else
                    feats.push_back(*v);
            }
        }
        rows.push_back(std::move(feats));
        ys.push_back(yv);
    }
    if (rows.empty()) throw DataError("no data rows in '" + path + "'");

    Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), n_features);
    Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (Eigen::Index j = 0; j < n_features; ++j)
            X(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
        y[static_cast<Eigen::Index>(i)] = ys[i];
    }
    std::string name = path;
    if (const auto slash = name.find_last_of('/'); slash != std::string::npos) name.erase(0, slash + 1);
    if (const auto dot = name.find_last_of('.'); dot != std::string::npos) name.erase(dot);
    return make_dataset(std::move(X), std::move(y), name, noise_sigma2);
}

/// Splits into train/test, then z-scores both with statistics of the train split.
/// The fraction of test rows is round(test_fraction * N).
inline std::pair<Dataset, Dataset> standardize_split(const Dataset& ds, double test_fraction,
                                                     Rng& rng) {
    if (!(test_fraction >= 0.0 && test_fraction < 1.0))
        throw DomainError("test_fraction must lie in [0, 1)");
    if (ds.empty()) throw DomainError("cannot split an empty dataset");
    const Eigen::Index n = ds.size();
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_test = static_cast<Eigen::Index>(std::llround(test_fraction * static_cast<double>(n)));
    n_test = std::min(n_test, n - 1);
    std::vector<Eigen::Index> test_idx(idx.begin(), idx.begin() + n_test);
    std::vector<Eigen::Index> train_idx(idx.begin() + n_test, idx.end());
    std::sort(test_idx.begin(), test_idx.end());
    std::sort(train_idx.begin(), train_idx.end());
    Dataset train = ds.subset(train_idx);
    Dataset test = ds.subset(test_idx);

    Standardization st;
    st.applied = true;
    const auto ntr = static_cast<double>(train.size());
    st.x_mean = train.X.colwise().mean().transpose();
    st.x_std.resize(train.dim());
    for (Eigen::Index j = 0; j < train.dim(); ++j) {
        const double var = (train.X.col(j).array() - st.x_mean[j]).square().sum() / ntr;
        if (!(var > 0.0)) throw DataError("column " + std::to_string(j) + " has zero variance", 0, j + 1);
        st.x_std[j] = std::sqrt(var);
    }
    st.y_mean = train.y.mean();
    const double yvar = (train.y.array() - st.y_mean).square().sum() / ntr;
    if (!(yvar > 0.0)) throw DataError("target column has zero variance");
    st.y_std = std::sqrt(yvar);

    for (Dataset* d : {&train, &test}) {
        for (Eigen::Index j = 0; j < d->dim(); ++j)
            d->X.col(j) = (d->X.col(j).array() - st.x_mean[j]) / st.x_std[j];
        d->y = (d->y.array() - st.y_mean) / st.y_std;
        d->standardization = st;
    }
    return {std::move(train), std::move(test)};
}

/// Maps standardized inputs back to raw units.
inline Eigen::MatrixXd destandardize_X(const Standardization& st, const Eigen::MatrixXd& Z) {
    if (!st.applied) return Z;
    Eigen::MatrixXd X = Z;
    for (Eigen::Index j = 0; j < X.cols(); ++j)
        X.col(j) = X.col(j).array() * st.x_std[j] + st.x_mean[j];
    return X;
}

inline Eigen::VectorXd destandardize_y(const Standardization& st, const Eigen::VectorXd& z) {
    if (!st.applied) return z;
    return (z.array() * st.y_std + st.y_mean).matrix();
}

/// Header x_0..x_{d-1},y.
inline void write_dataset_csv(std::ostream& os, const Dataset& ds) {
    for (Eigen::Index j = 0; j < ds.dim(); ++j) os << "x_" << j << ',';
    os << "y\n";
    os.precision(17);
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
        for (Eigen::Index j = 0; j < ds.dim(); ++j) os << ds.X(i, j) << ',';
        os << ds.y[i] << '\n';
    }
}

}  // namespace mfbnn
