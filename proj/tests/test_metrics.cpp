#include "elastica/metrics.hpp"

#include "elastica/io.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>

using namespace elastica;
using elastica::testing::random_cloud;
using json = nlohmann::json;

namespace {

Image image_from_json(const json& rows, int h, int w) {
  Image img(w, h);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = rows[r][c][ch].get<double>();
  return img;
}

Points points_from_rows(const json& rows) {
  Points p(3, static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int k = 0; k < 3; ++k) p(k, static_cast<Eigen::Index>(i)) = rows[i][k].get<double>();
  return p;
}

double brute_force_emd(const Points& a, const Points& b) {
  std::vector<int> perm(static_cast<std::size_t>(a.cols()));
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (Eigen::Index i = 0; i < a.cols(); ++i) total += (a.col(i) - b.col(perm[static_cast<std::size_t>(i)])).norm();
    best = std::min(best, total / static_cast<double>(a.cols()));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

const json& fixtures() {
  static const json j = json::parse(read_text_file(std::string(ELASTICA_FIXTURE_DIR) + "/metric_fixtures.json"));
  return j;
}

}  // namespace

TEST_CASE("psnr") {
  Image a(8, 8, Vec3::Constant(0.3));
  CHECK(psnr(a, a) == kPsnrCap);
  Image b = a;
  for (auto& ch : b.channels) ch += 0.1;  // MSE = 0.01
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(psnr(a, b) == psnr(b, a));
  CHECK_THROWS_AS(psnr(a, Image(4, 8)), DataError);
}

TEST_CASE("ssim") {
  Rng rng(3);
  Image a(16, 16);
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c)
      for (int ch = 0; ch < 3; ++ch) a.at(r, c, ch) = rng.uniform();
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(ssim(Image(10, 10), Image(10, 10)), DataError);

  SUBCASE("constant images reduce to the luminance term") {
    const Image x(12, 12, Vec3::Constant(0.4)), y(12, 12, Vec3::Constant(0.5));
    const double c1 = 1e-4;
    CHECK(ssim(x, y) == doctest::Approx((2 * 0.4 * 0.5 + c1) / (0.16 + 0.25 + c1)).epsilon(1e-12));
  }
  SUBCASE("negative image has a negative structure term") {
    Image neg(16, 16);
    for (int r = 0; r < 16; ++r)
      for (int c = 0; c < 16; ++c)
        for (int ch = 0; ch < 3; ++ch) neg.at(r, c, ch) = 1.0 - a.at(r, c, ch);
    CHECK(ssim(a, neg) < 0.0);
  }
}

TEST_CASE("psnr and ssim match the reference fixtures") {
  for (const auto& f : fixtures()["images"]) {
    const int h = f["height"], w = f["width"];
    const Image a = image_from_json(f["a"], h, w), b = image_from_json(f["b"], h, w);
    INFO(f["name"].get<std::string>());
    CHECK(std::abs(psnr(a, b) - f["psnr"].get<double>()) < 1e-6);
    CHECK(std::abs(ssim(a, b) - f["ssim"].get<double>()) < 1e-6);
  }
}

TEST_CASE("chamfer") {
  CHECK(chamfer(Points(Vec3(0, 0, 0)), Points(Vec3(1, 0, 0))) == 2.0);
  Rng rng(5);
  const Points a = random_cloud(rng, 30, Vec3::Zero(), 1.0), b = random_cloud(rng, 20, Vec3::Zero(), 1.0);
  CHECK(chamfer(a, a) == 0.0);
  CHECK(chamfer(a, b) == chamfer(b, a));
  CHECK_THROWS_AS(chamfer(a, Points(3, 0)), DataError);
  for (const auto& f : fixtures()["chamfer"])
    CHECK(std::abs(chamfer(points_from_rows(f["a"]), points_from_rows(f["b"])) - f["value"].get<double>()) < 1e-6);
}

TEST_CASE("emd") {
  Rng rng(6);
  SUBCASE("matches the brute-force optimum") {
    for (int trial = 0; trial < 100; ++trial) {
      const int n = 1 + static_cast<int>(rng.below(6));
      const Points a = random_cloud(rng, n, Vec3::Zero(), 1.0), b = random_cloud(rng, n, Vec3(0.2, 0, 0), 1.0);
      CHECK(emd(a, b) == doctest::Approx(brute_force_emd(a, b)).epsilon(1e-12));
    }
  }
  SUBCASE("labeling does not matter") {
    const Points a = random_cloud(rng, 40, Vec3::Zero(), 1.0);
    Points b = a;
    b.col(3).swap(b.col(17));
    CHECK(emd(a, a) == 0.0);
    CHECK(emd(a, b) == 0.0);
  }
  SUBCASE("translation by a costs |a|") {
    const Points a = random_cloud(rng, 30, Vec3::Zero(), 0.1);
    CHECK(emd(a, a.colwise() + Vec3(5, 0, 0)) == doctest::Approx(5.0).epsilon(1e-12));
  }
  SUBCASE("Sinkhorn agrees with the exact solver") {
    const Points a = random_cloud(rng, 60, Vec3::Zero(), 1.0), b = random_cloud(rng, 60, Vec3(0.3, 0, 0), 1.0);
    Eigen::MatrixXd cost(60, 60);
    for (int i = 0; i < 60; ++i)
      for (int j = 0; j < 60; ++j) cost(i, j) = (a.col(i) - b.col(j)).norm();
    CHECK(sinkhorn_cost(cost) == doctest::Approx(emd(a, b)).epsilon(2e-3));
  }
  SUBCASE("large sets use the approximation") {
    const Points a = random_cloud(rng, 300, Vec3::Zero(), 1.0);
    CHECK(emd(a, a.colwise() + Vec3(0, 2, 0)) == doctest::Approx(2.0).epsilon(1e-3));
  }
  CHECK_THROWS_AS(emd(Points::Zero(3, 2), Points::Zero(3, 3)), DataError);
}

TEST_CASE("parameter_mae") {
  const auto p = PhysicalAttributes::Shared(1, 100, 1, 0.5);
  const auto t = PhysicalAttributes::Shared(2, 400, 1, 0.2);
  const auto zero = parameter_mae({t}, {t});
  for (const auto& [name, v] : zero) CHECK(v == 0.0);
  const auto mae = parameter_mae({p}, {t});
  CHECK(mae.at("k") == 300.0);
  CHECK(mae.at("k/m") == 100.0);
  CHECK(mae.at("f") == doctest::Approx(0.3));
  for (const auto& [name, v] : mae) CHECK(v >= 0.0);
  CHECK_THROWS_AS(parameter_mae({p}, {t}, {"volume"}), Error);
}
