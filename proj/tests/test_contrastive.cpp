#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "helpers.hpp"
#include "iic/contrastive.hpp"
#include "iic/errors.hpp"

using namespace iic;

namespace {

MemoryBank bank_from_rows(BankRole role,
                          const std::vector<std::vector<double>>& rows) {
  MemoryBank bank;
  bank.role = role;
  bank.rows = static_cast<int>(rows.size());
  bank.dim = static_cast<int>(rows[0].size());
  for (const auto& r : rows)
    bank.data.insert(bank.data.end(), r.begin(), r.end());
  return bank;
}

// Plain reimplementation of the directional loss as unfused scalar code:
// per-term critic values first, then the log-ratio.
double scalar_loss(const std::vector<double>& anchor,
                   const std::vector<double>& positive,
                   const MemoryBank& bank_other, const MemoryBank& bank_neg,
                   const NegativeDraw& draw, double tau) {
  auto cosine = [](const std::vector<double>& a, const double* b, int d) {
    double dot = 0, na = 0, nb = 0;
    for (int i = 0; i < d; ++i) {
      dot += a[i] * b[i];
      na += a[i] * a[i];
      nb += b[i] * b[i];
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };
  const int d = static_cast<int>(anchor.size());
  const double h_pos = std::exp(cosine(anchor, positive.data(), d) / tau);
  double denom = h_pos;
  for (int j : draw.indices_view2)
    denom += std::exp(cosine(anchor, bank_other.row(j), d) / tau);
  for (int j : draw.indices_neg)
    denom += std::exp(cosine(anchor, bank_neg.row(j), d) / tau);
  return -std::log(h_pos / denom);
}

}  // namespace

TEST_CASE("critic matches closed forms") {
  const std::vector<double> ex = {1, 0}, ey = {0, 1};
  const std::vector<double> mex = {-1, 0};
  CHECK(critic(ex, ex, 0.07) ==
        doctest::Approx(std::exp(1.0 / 0.07)).epsilon(1e-12));
  CHECK(std::exp(1.0 / 0.07) == doctest::Approx(1.5982753e6).epsilon(1e-4));
  CHECK(critic(ex, ey, 0.5) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(critic(ex, mex, 1.0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  // defensive renormalization: scaling either argument changes nothing
  const std::vector<double> sx = {2.5, 0}, sy = {0, -3.0};
  CHECK(critic(sx, sy, 0.25) == doctest::Approx(critic(ex, {0, -1}, 0.25)));
  CHECK_THROWS_AS(critic(ex, ey, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(critic(ex, {1, 0, 0}, 1.0), std::invalid_argument);
}

TEST_CASE("banks initialize on the unit sphere, seeded") {
  const MemoryBanks banks = init_banks(1000, 64, 5);
  const MemoryBanks again = init_banks(1000, 64, 5);
  CHECK(banks.view1.data == again.view1.data);
  CHECK(banks.view2.data != banks.view1.data);
  for (const MemoryBank* bank : {&banks.view1, &banks.view2, &banks.intra_neg}) {
    REQUIRE(bank->rows == 1000);
    for (int i = 0; i < bank->rows; ++i) {
      double n2 = 0;
      for (int j = 0; j < bank->dim; ++j) n2 += bank->row(i)[j] * bank->row(i)[j];
      CHECK(std::abs(std::sqrt(n2) - 1.0) <= 1e-6);
    }
  }
  // rows spread over the sphere: mean pairwise cosine near zero
  double mean_cos = 0;
  int cnt = 0;
  for (int i = 0; i < 100; ++i)
    for (int j = i + 1; j < 100; ++j) {
      double dot = 0;
      for (int k = 0; k < 64; ++k)
        dot += banks.view1.row(i)[k] * banks.view1.row(j)[k];
      mean_cos += dot;
      ++cnt;
    }
  CHECK(std::abs(mean_cos / cnt) <= 0.05);
}

TEST_CASE("negative sampling obeys the index contracts") {
  Rng rng(31);
  const NegativeDraw tiny = sample_negatives(2, 1, 0, rng);
  REQUIRE(tiny.indices_view2.size() == 1);
  CHECK(tiny.indices_view2[0] == 1);
  CHECK(tiny.indices_neg.size() == 2);

  const NegativeDraw paper = sample_negatives(5000, 1024, 7, rng);
  CHECK(paper.indices_view2.size() == 1024);
  CHECK(paper.indices_neg.size() == 1025);

  // frequency check: view2 never hits i, both draws near uniform
  const int N = 100, k = 10, i = 42, trials = 10000;
  std::vector<int> count_v2(N, 0), count_neg(N, 0);
  for (int t = 0; t < trials; ++t) {
    const NegativeDraw draw = sample_negatives(N, k, i, rng);
    for (int j : draw.indices_view2) count_v2[j] += 1;
    for (int j : draw.indices_neg) count_neg[j] += 1;
  }
  CHECK(count_v2[i] == 0);
  const double exp_v2 = double(trials) * k / (N - 1);
  const double sd_v2 = std::sqrt(exp_v2 * (1.0 - 1.0 / (N - 1)));
  for (int j = 0; j < N; ++j) {
    if (j == i) continue;
    CHECK(std::abs(count_v2[j] - exp_v2) <= 4 * sd_v2 + 1);
  }
  const double exp_neg = double(trials) * (k + 1) / N;
  const double sd_neg = std::sqrt(exp_neg * (1.0 - 1.0 / N));
  for (int j = 0; j < N; ++j)
    CHECK(std::abs(count_neg[j] - exp_neg) <= 4 * sd_neg + 1);
  CHECK(count_neg[i] > 0);  // the anchor's own slot is a legal intra negative

  CHECK_THROWS_AS(sample_negatives(10, 0, 1, rng), std::invalid_argument);
  CHECK_THROWS_AS(sample_negatives(10, 10, 1, rng), std::invalid_argument);
  CHECK_THROWS_AS(sample_negatives(10, 3, 10, rng), std::out_of_range);
}

TEST_CASE("hand-checked directional loss") {
  // anchor = positive = (1,0); negatives all (0,1): h_pos = e, three unit
  // scores -> loss = -log(e / (e + 3))
  const std::vector<double> anchor = {1, 0}, positive = {1, 0};
  const MemoryBank bank2 = bank_from_rows(BankRole::view2, {{0, 1}, {0, 1}});
  const MemoryBank bankn = bank_from_rows(BankRole::intra_neg, {{0, 1}, {0, 1}});
  NegativeDraw draw;
  draw.positive_index = 0;
  draw.indices_view2 = {1};
  draw.indices_neg = {0, 1};
  const DirectionalLoss out =
      loss_one_direction(anchor, positive, bank2, bankn, draw, 1.0);
  CHECK(out.loss == doctest::Approx(0.7437114915272143).epsilon(1e-12));
  CHECK(out.denom_terms == 4);
}

TEST_CASE("uniform scores give log of the term count") {
  const std::vector<double> v = {0.6, 0.8};
  const MemoryBank bank2 = bank_from_rows(BankRole::view2, {v, v});
  const MemoryBank bankn = bank_from_rows(BankRole::intra_neg, {v, v});
  NegativeDraw draw;
  draw.indices_view2 = {0};  // k = 1
  draw.indices_neg = {0, 1};
  const DirectionalLoss out = loss_one_direction(v, v, bank2, bankn, draw, 0.07);
  CHECK(out.loss == doctest::Approx(std::log(4.0)).epsilon(1e-9));
  CHECK(std::log(4.0) == doctest::Approx(1.3862943611198906).epsilon(1e-12));
}

TEST_CASE("vectorized loss equals the scalar loop on random instances") {
  Rng rng(55);
  for (int instance = 0; instance < 100; ++instance) {
    const int d = 4 + int(rng.uniform_below(12));
    const int n = 6 + int(rng.uniform_below(20));
    const int k = 1 + int(rng.uniform_below(4));
    const MemoryBanks banks = init_banks(n, d, 900 + instance);
    const auto anchor = testutil::random_unit(d, rng);
    const auto positive = testutil::random_unit(d, rng);
    const int i = int(rng.uniform_below(n));
    NegativeDraw draw = sample_negatives(n, k, i, rng);
    const double tau = 0.05 + 0.5 * rng.uniform01();
    const DirectionalLoss out =
        loss_one_direction(anchor, positive, banks.view2, banks.intra_neg, draw, tau);
    const double reference =
        scalar_loss(anchor, positive, banks.view2, banks.intra_neg, draw, tau);
    CHECK(std::abs(out.loss - reference) <= 1e-10);
    CHECK(out.denom_terms == 1 + k + (k + 1));
  }
}

TEST_CASE("loss gradients match finite differences on raw inputs") {
  Rng rng(66);
  const int d = 8, n = 12, k = 4;
  const MemoryBanks banks = init_banks(n, d, 77);
  for (int instance = 0; instance < 20; ++instance) {
    // deliberately non-unit inputs: the kernel renormalizes internally and
    // differentiates through the true norms
    std::vector<double> anchor(d), positive(d);
    for (auto& v : anchor) v = rng.normal() * 1.5;
    for (auto& v : positive) v = rng.normal() * 0.8;
    NegativeDraw draw = sample_negatives(n, k, instance % n, rng);
    const double tau = 0.2;
    const DirectionalLoss out =
        loss_one_direction(anchor, positive, banks.view2, banks.intra_neg, draw, tau);
    const double h = 1e-6;
    for (int which = 0; which < 2; ++which) {
      std::vector<double>& target = which == 0 ? anchor : positive;
      const std::vector<double>& grad =
          which == 0 ? out.grad_anchor : out.grad_positive;
      for (int i = 0; i < d; ++i) {
        const double keep = target[i];
        target[i] = keep + h;
        const double up = loss_one_direction(anchor, positive, banks.view2,
                                             banks.intra_neg, draw, tau)
                              .loss;
        target[i] = keep - h;
        const double down = loss_one_direction(anchor, positive, banks.view2,
                                               banks.intra_neg, draw, tau)
                                .loss;
        target[i] = keep;
        const double fd = (up - down) / (2 * h);
        const double scale = std::max({std::abs(fd), std::abs(grad[i]), 1e-3});
        CHECK(std::abs(fd - grad[i]) / scale <= 1e-6);
      }
    }
  }
}

TEST_CASE("empty intra-negative draw drops those terms") {
  Rng rng(67);
  const int d = 8, n = 12, k = 4;
  const MemoryBanks banks = init_banks(n, d, 78);
  const auto anchor = testutil::random_unit(d, rng);
  const auto positive = testutil::random_unit(d, rng);
  NegativeDraw draw = sample_negatives(n, k, 3, rng);
  draw.indices_neg.clear();
  const DirectionalLoss out =
      loss_one_direction(anchor, positive, banks.view2, banks.intra_neg, draw, 0.1);
  CHECK(out.denom_terms == 1 + k);
  const double reference =
      scalar_loss(anchor, positive, banks.view2, banks.intra_neg, draw, 0.1);
  CHECK(std::abs(out.loss - reference) <= 1e-10);
}

TEST_CASE("total loss composes the two directions") {
  Rng rng(88);
  const int d = 8, n = 10, k = 3;
  const MemoryBanks banks = init_banks(n, d, 99);
  const auto v1 = testutil::random_unit(d, rng);
  const auto v2 = testutil::random_unit(d, rng);
  NegativeDraw draw1 = sample_negatives(n, k, 2, rng);
  NegativeDraw draw2 = sample_negatives(n, k, 2, rng);
  const TotalLoss total = total_loss(v1, v2, banks, draw1, draw2, 0.1);
  const DirectionalLoss d1 =
      loss_one_direction(v1, v2, banks.view2, banks.intra_neg, draw1, 0.1);
  const DirectionalLoss d2 =
      loss_one_direction(v2, v1, banks.view1, banks.intra_neg, draw2, 0.1);
  CHECK(total.loss == doctest::Approx(d1.loss + d2.loss).epsilon(1e-14));
  CHECK(total.loss > 0.0);
  for (int i = 0; i < d; ++i) {
    CHECK(total.grad_v1[i] ==
          doctest::Approx(d1.grad_anchor[i] + d2.grad_positive[i]).epsilon(1e-12));
    CHECK(total.grad_v2[i] ==
          doctest::Approx(d2.grad_anchor[i] + d1.grad_positive[i]).epsilon(1e-12));
  }
}

TEST_CASE("symmetric construction doubles one direction") {
  // identical banks and draws for both directions, v1 = v2: the two
  // directional losses coincide
  Rng rng(89);
  const int d = 6, n = 8, k = 2;
  MemoryBanks banks = init_banks(n, d, 111);
  banks.view1.data = banks.view2.data;  // mirror the cross-view banks
  const auto v = testutil::random_unit(d, rng);
  NegativeDraw draw = sample_negatives(n, k, 1, rng);
  const TotalLoss total = total_loss(v, v, banks, draw, draw, 0.2);
  const DirectionalLoss one =
      loss_one_direction(v, v, banks.view2, banks.intra_neg, draw, 0.2);
  CHECK(total.loss == doctest::Approx(2 * one.loss).epsilon(1e-12));
}

TEST_CASE("fetch_weights gathers bank rows bitwise") {
  const int d = 5, n = 9, k = 3;
  const MemoryBanks banks = init_banks(n, d, 222);
  Rng rng(90);
  const NegativeDraw draw = sample_negatives(n, k, 4, rng);
  const FetchedWeights fetched = fetch_weights(banks, draw);
  CHECK(fetched.dim == d);
  REQUIRE(fetched.w1.size() == std::size_t(k) * d);
  REQUIRE(fetched.wneg.size() == std::size_t(k + 1) * d);
  for (int r = 0; r < k; ++r)
    for (int j = 0; j < d; ++j) {
      CHECK(fetched.w1[r * d + j] == banks.view1.row(draw.indices_view2[r])[j]);
      CHECK(fetched.w2[r * d + j] == banks.view2.row(draw.indices_view2[r])[j]);
    }
  for (int r = 0; r < k + 1; ++r)
    for (int j = 0; j < d; ++j)
      CHECK(fetched.wneg[r * d + j] == banks.intra_neg.row(draw.indices_neg[r])[j]);
  // concatenations: view rows then neg rows
  REQUIRE(fetched.cat1.size() == std::size_t(2 * k + 1) * d);
  CHECK(std::equal(fetched.w1.begin(), fetched.w1.end(), fetched.cat1.begin()));
  CHECK(std::equal(fetched.wneg.begin(), fetched.wneg.end(),
                   fetched.cat1.begin() + k * d));
  CHECK(std::equal(fetched.w2.begin(), fetched.w2.end(), fetched.cat2.begin()));
}

TEST_CASE("bank updates overwrite exactly one row") {
  MemoryBanks banks = init_banks(6, 4, 333);
  const std::vector<double> before = banks.view1.data;
  Rng rng(91);
  const auto v = testutil::random_unit(4, rng);
  bank_update(banks.view1, 2, v);
  for (int j = 0; j < 4; ++j) CHECK(banks.view1.row(2)[j] == v[j]);
  for (int i = 0; i < 6; ++i) {
    if (i == 2) continue;
    for (int j = 0; j < 4; ++j)
      CHECK(banks.view1.row(i)[j] == before[i * 4 + j]);
  }
  CHECK_THROWS_AS(bank_update(banks.view1, 6, v), std::out_of_range);
  CHECK_THROWS_AS(bank_update(banks.view1, 0, {1.0, 0.0}),
                  std::invalid_argument);
}

TEST_CASE("momentum blend renormalizes") {
  MemoryBanks banks = init_banks(3, 4, 444);
  const std::vector<double> old_row(banks.view2.row(1), banks.view2.row(1) + 4);
  Rng rng(92);
  const auto v = testutil::random_unit(4, rng);
  bank_update(banks.view2, 1, v, 0.5);
  std::vector<double> blended(4);
  double n2 = 0;
  for (int j = 0; j < 4; ++j) {
    blended[j] = 0.5 * old_row[j] + 0.5 * v[j];
    n2 += blended[j] * blended[j];
  }
  for (int j = 0; j < 4; ++j)
    CHECK(banks.view2.row(1)[j] ==
          doctest::Approx(blended[j] / std::sqrt(n2)).epsilon(1e-12));
  double rn = 0;
  for (int j = 0; j < 4; ++j) rn += banks.view2.row(1)[j] * banks.view2.row(1)[j];
  CHECK(std::abs(std::sqrt(rn) - 1.0) <= 1e-12);
  CHECK_THROWS_AS(bank_update(banks.view2, 1, v, 1.0), std::invalid_argument);
}

TEST_CASE("bank files round trip and validate") {
  testutil::TempDir dir("banks");
  const MemoryBanks banks = init_banks(7, 6, 555);
  const auto path = dir.path() / "banks.iicbnk";
  save_banks(path, banks);
  const MemoryBanks loaded = load_banks(path);
  CHECK(loaded.view1.data == banks.view1.data);
  CHECK(loaded.view2.data == banks.view2.data);
  CHECK(loaded.intra_neg.data == banks.intra_neg.data);
  CHECK(loaded.view1.role == BankRole::view1);
  CHECK(loaded.intra_neg.role == BankRole::intra_neg);

  // a non-unit row must be rejected on load
  MemoryBanks bad = banks;
  bad.view2.data[8] += 0.2;
  const auto bad_path = dir.path() / "bad.iicbnk";
  save_banks(bad_path, bad);
  CHECK_THROWS_AS(load_banks(bad_path), DataError);
  CHECK_THROWS_AS(load_banks(dir.path() / "missing.iicbnk"), DataError);
}
