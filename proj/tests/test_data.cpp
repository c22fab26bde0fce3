#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mfbnn/data.hpp"

using namespace mfbnn;
namespace fs = std::filesystem;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace {

std::string write_tmp(const std::string& name, const std::string& body) {
    const auto dir = fs::temp_directory_path() / "mfbnn_test_data";
    fs::create_directories(dir);
    const auto p = (dir / name).string();
    std::ofstream(p) << body;
    return p;
}

}  // namespace

TEST(Generators, TwoPoints) {
    const auto d = make_two_points();
    EXPECT_EQ(d.size(), 2);
    EXPECT_EQ(d.X(0, 0), -1.0);
    EXPECT_EQ(d.y[1], 1.0);
    EXPECT_DOUBLE_EQ(d.noise_sigma2, 0.025);
}

TEST(Generators, SineAndToy) {
    Rng r1(1), r2(1);
    const auto s = make_sine(500, r1);
    EXPECT_TRUE(s.X.isApprox(make_sine(500, r2).X, 0.0));
    EXPECT_LE(s.X.cwiseAbs().maxCoeff(), 5.0);
    const Vector resid = s.y - s.X.col(0).array().sin().matrix();
    EXPECT_NEAR(resid.squaredNorm() / 500, 0.025, 0.006);
    const auto t = make_toy(400, r1);
    EXPECT_EQ(t.dim(), 2);
    const Vector rt = t.y - (t.X.col(0).array() * t.X.col(1).array().sin()).matrix();
    EXPECT_NEAR(rt.squaredNorm() / 400, 0.025, 0.006);
    EXPECT_THROW(make_sine(0, r1), DomainError);
}

TEST(Dataset, ShapeAndNoiseChecks) {
    EXPECT_THROW(make_dataset(Matrix::Zero(3, 1), Vector::Zero(2), "x"), ShapeError);
    EXPECT_THROW(make_dataset(Matrix::Zero(2, 1), Vector::Zero(2), "x", 0.0), DomainError);
    const auto d = make_dataset(Matrix::Zero(0, 2), Vector::Zero(0), "empty");
    EXPECT_TRUE(d.empty());
}

TEST(Csv, LoadsWithTargetAndDrop) {
    const auto p = write_tmp("ok.csv", "\xEF\xBB\xBF" "id,a,\"b\",target\n1,0.5,2,3.5\n\n2,-1,4e-1,7\n");
    const auto d = load_uci_csv(p, "target", {"id"});
    ASSERT_EQ(d.size(), 2);
    ASSERT_EQ(d.dim(), 2);
    EXPECT_DOUBLE_EQ(d.X(1, 1), 0.4);
    EXPECT_DOUBLE_EQ(d.y[1], 7.0);
    EXPECT_EQ(d.name, "ok");
    const auto byidx = load_uci_csv(p, "3");
    EXPECT_EQ(byidx.dim(), 3);
}

TEST(Csv, Errors) {
    EXPECT_THROW(load_uci_csv("/nonexistent/file.csv", "y"), DataError);
    const auto hdr = write_tmp("hdr.csv", "a,y\n");
    try {
        load_uci_csv(hdr, "y");
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("no data rows"), std::string::npos);
    }
    EXPECT_THROW(load_uci_csv(write_tmp("empty.csv", ""), "y"), DataError);
    EXPECT_THROW(load_uci_csv(write_tmp("t.csv", "a,y\n1,2\n"), "z"), DataError);
    EXPECT_THROW(load_uci_csv(write_tmp("d.csv", "a,y\n1,2\n"), "y", {"q"}), DataError);
    EXPECT_THROW(load_uci_csv(write_tmp("cols.csv", "a,y\n1,2,3\n"), "y"), DataError);
    try {
        load_uci_csv(write_tmp("nan.csv", "a,y\n1,2\nx,3\n"), "y");
        FAIL();
    } catch (const DataError& e) {
        const std::string m = e.what();
        EXPECT_NE(m.find("3"), std::string::npos) << m;  // row number
    }
    // non-numeric cells in dropped columns are fine
    EXPECT_EQ(load_uci_csv(write_tmp("skip.csv", "name,a,y\nfoo,1,2\nbar,3,4\n"), "y", {"name"}).size(), 2);
}

TEST(Split, StandardizesWithTrainStatistics) {
    Rng rng(3);
    auto raw = make_toy(200, rng);
    raw.X.col(1) = raw.X.col(1) * 30 + Vector::Constant(200, 7);
    Rng s1(9);
    const auto [train, test] = standardize_split(raw, 0.1, s1);
    EXPECT_EQ(test.size(), 20);
    EXPECT_EQ(train.size(), 180);
    for (Eigen::Index j = 0; j < 2; ++j) {
        EXPECT_NEAR(train.X.col(j).mean(), 0.0, 1e-12);
        EXPECT_NEAR((train.X.col(j).array() - train.X.col(j).mean()).square().mean(), 1.0, 1e-12);
    }
    EXPECT_NEAR(train.y.mean(), 0.0, 1e-12);
    // test rows use the train transform, so their mean is not forced to zero
    EXPECT_GT(std::abs(test.X.col(0).mean()), 1e-6);

    // round trip recovers raw rows
    const Matrix back = destandardize_X(test.standardization, test.X);
    const Vector yback = destandardize_y(test.standardization, test.y);
    for (Eigen::Index i = 0; i < test.size(); ++i) {
        bool found = false;
        for (Eigen::Index r = 0; r < raw.size() && !found; ++r)
            found = (raw.X.row(r) - back.row(i)).norm() < 1e-9 && std::abs(raw.y[r] - yback[i]) < 1e-9;
        EXPECT_TRUE(found) << i;
    }

    Rng s2(9);
    const auto again = standardize_split(raw, 0.1, s2);
    EXPECT_TRUE(again.first.X.isApprox(train.X, 0.0));
}

TEST(Split, Errors) {
    Rng rng(1);
    const auto d = make_dataset((Matrix(3, 1) << 1, 1, 1).finished(), (Vector(3) << 1, 2, 3).finished(), "c");
    EXPECT_THROW(standardize_split(d, 0.0, rng), DataError);
    EXPECT_THROW(standardize_split(make_two_points(), 1.0, rng), DomainError);
    EXPECT_THROW(standardize_split(make_dataset(Matrix::Zero(0, 1), Vector::Zero(0), "e"), 0.1, rng), DomainError);
}

TEST(Csv, WriteRoundTrip) {
    Rng rng(2);
    const auto d = make_toy(5, rng);
    std::ostringstream os;
    write_dataset_csv(os, d);
    const auto p = write_tmp("rt.csv", os.str());
    const auto back = load_uci_csv(p, "y");
    EXPECT_TRUE(back.X.isApprox(d.X, 1e-15));
    EXPECT_TRUE(back.y.isApprox(d.y, 1e-15));
}
