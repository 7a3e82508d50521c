#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "data.hpp"
#include "test_util.hpp"

using namespace mgpc;
using namespace mgpc::test;

namespace {
struct TempFile {
  std::string path;
  explicit TempFile(const std::string& contents) {
    static int counter = 0;
    path = (std::filesystem::temp_directory_path() /
            ("mgpc_test_" + std::to_string(getpid()) + "_" + std::to_string(counter++) + ".csv"))
               .string();
    std::ofstream out(path);
    out << contents;
  }
  ~TempFile() { std::remove(path.c_str()); }
};
}  // namespace

TEST_CASE("load_csv hand file") {
  TempFile f("a,b,label\n1.0,2.0,0\n3.5,-1.0,1\n0.0,0.5,0\n");
  const Dataset ds = load_csv(f.path);
  CHECK(ds.rows() == 3);
  CHECK(ds.cols() == 2);
  CHECK(ds.num_classes == 2);
  CHECK(ds.x(1, 0) == doctest::Approx(3.5));
  CHECK(ds.y[1] == 1);
  CHECK(ds.feature_names[0] == "a");
}

TEST_CASE("load_csv wine fixture") {
  const Dataset ds = load_csv(std::string(MGPC_TEST_DATA_DIR) + "/wine.csv");
  CHECK(ds.rows() == 178);
  CHECK(ds.cols() == 13);
  CHECK(ds.num_classes == 3);
}

TEST_CASE("load_csv error paths") {
  SUBCASE("empty file") {
    TempFile f("");
    CHECK_THROWS_AS(load_csv(f.path), DataError);
  }
  SUBCASE("header only") {
    TempFile f("a,label\n");
    CHECK_THROWS_AS(load_csv(f.path), DataError);
  }
  SUBCASE("ragged row") {
    TempFile f("a,b,label\n1,2,0\n1,0\n");
    CHECK_THROWS_WITH_AS(load_csv(f.path), doctest::Contains("ragged"), DataError);
  }
  SUBCASE("non-numeric feature") {
    TempFile f("a,b,label\n1,x,0\n");
    CHECK_THROWS_WITH_AS(load_csv(f.path), doctest::Contains("non-numeric"), DataError);
  }
  SUBCASE("missing label column") {
    TempFile f("a,b,c\n1,2,0\n");
    CHECK_THROWS_AS(load_csv(f.path), DataError);
  }
  SUBCASE("label column by index") {
    TempFile f("a,b,c\n1,2,0\n4,5,1\n");
    CsvOptions o;
    o.label_column = "2";
    const Dataset ds = load_csv(f.path, o);
    CHECK(ds.cols() == 2);
    CHECK(ds.num_classes == 2);
  }
}

TEST_CASE("load_libsvm") {
  TempFile f("0 1:0.5 3:2.0\n1 2:1.0\n2 1:-1 2:0.25 3:1\n");
  const Dataset ds = load_libsvm(f.path);
  CHECK(ds.rows() == 3);
  CHECK(ds.cols() == 3);
  CHECK(ds.num_classes == 3);
  CHECK(ds.x(0, 0) == doctest::Approx(0.5));
  CHECK(ds.x(0, 1) == 0.0);
  CHECK(ds.x(2, 2) == doctest::Approx(1.0));
}

TEST_CASE("standardize") {
  Rng rng(9);
  Dataset ds;
  ds.x = random_matrix(40, 3, rng, 2.5);
  ds.x.col(2).setConstant(7.0);  // constant column
  ds.y = Eigen::VectorXi::Zero(40);
  ds.num_classes = 1;

  const Standardizer s = fit_standardizer(ds);
  const MatrixXd orig = ds.x;
  standardize(s, ds);
  CHECK(std::abs(ds.x.col(0).mean()) < 1e-12);
  CHECK(ds.x.col(0).squaredNorm() / 40.0 == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(ds.x.col(2).cwiseAbs().maxCoeff() < 1e-6);  // sigma floor keeps it finite, near zero
  const MatrixXd back = s.invert(ds.x);
  CHECK((back - orig).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("split") {
  Rng rng(10);
  Dataset ds;
  ds.x = random_matrix(100, 2, rng);
  ds.y.resize(100);
  for (Index i = 0; i < 100; ++i) ds.y[i] = static_cast<int>(i % 3);
  ds.num_classes = 3;

  SUBCASE("fraction 1.0 gives empty test") {
    const auto sp = split(ds, 1.0, 1);
    CHECK(sp.train.rows() == 100);
    CHECK(sp.test.rows() == 0);
  }
  SUBCASE("seeded determinism") {
    const auto a = split(ds, 0.9, 42);
    const auto b = split(ds, 0.9, 42);
    const auto c = split(ds, 0.9, 43);
    CHECK((a.train.x - b.train.x).norm() == 0.0);
    CHECK((a.train.x - c.train.x).norm() != 0.0);
  }
  SUBCASE("stratified preserves class ratios within one instance") {
    const auto sp = split(ds, 0.7, 4, true);
    for (int c = 0; c < 3; ++c) {
      const Index train_c = (sp.train.y.array() == c).count();
      CHECK(std::abs(static_cast<double>(train_c) - 0.7 * 34) <= 1.3);
    }
    CHECK(sp.train.rows() + sp.test.rows() == 100);
  }
}

TEST_CASE("synthetic generator") {
  const auto p = synthetic(400, 5);
  CHECK(p.data.rows() == 400);
  CHECK(p.data.cols() == 2);
  CHECK(p.data.num_classes == 3);
  SUBCASE("labels are the argmax of the returned latents") {
    for (Index i = 0; i < 400; ++i) {
      Index best;
      p.latents.row(i).maxCoeff(&best);
      CHECK(p.data.y[i] == static_cast<int>(best));
    }
  }
  SUBCASE("box support") {
    CHECK(p.data.x.minCoeff() >= -2.5);
    CHECK(p.data.x.maxCoeff() <= 2.5);
  }
  SUBCASE("seed controls the draw") {
    const auto q = synthetic(400, 5);
    const auto r = synthetic(400, 6);
    CHECK((p.data.x - q.data.x).norm() == 0.0);
    CHECK((p.latents - q.latents).norm() == 0.0);
    CHECK((p.data.x - r.data.x).norm() != 0.0);
  }
}
