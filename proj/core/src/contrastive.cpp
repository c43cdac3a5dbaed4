#include "iic/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include "iic/binary_io.hpp"
#include "iic/errors.hpp"

namespace iic {

namespace {

double vec_norm(const double* v, int d) {
  double s = 0;
  for (int j = 0; j < d; ++j) s += v[j] * v[j];
  return std::sqrt(s);
}

double checked_norm(const double* v, int d, const char* what) {
  const double n = vec_norm(v, d);
  if (!(n > 1e-12))
    throw NumericError(std::string("degenerate norm in ") + what);
  return n;
}

void check_bank_index(const MemoryBank& bank, int i) {
  if (i < 0 || i >= bank.rows)
    throw std::out_of_range("index out of bank range");
}

}  // namespace

const double* MemoryBank::row(int i) const {
  check_bank_index(*this, i);
  return data.data() + static_cast<std::size_t>(i) * dim;
}

double* MemoryBank::row(int i) {
  check_bank_index(*this, i);
  return data.data() + static_cast<std::size_t>(i) * dim;
}

MemoryBanks init_banks(int n, int d, std::uint64_t seed) {
  if (n < 1 || d < 2) throw std::invalid_argument("bank shape too small");
  Rng rng(seed);
  auto fill = [&](MemoryBank& bank, BankRole role) {
    bank.role = role;
    bank.rows = n;
    bank.dim = d;
    bank.data.resize(static_cast<std::size_t>(n) * d);
    for (int i = 0; i < n; ++i) {
      double* r = bank.row(i);
      double norm = 0;
      do {
        for (int j = 0; j < d; ++j) r[j] = rng.normal();
        norm = vec_norm(r, d);
      } while (!(norm > 1e-12));
      for (int j = 0; j < d; ++j) r[j] /= norm;
    }
  };
  MemoryBanks banks;
  fill(banks.view1, BankRole::view1);
  fill(banks.view2, BankRole::view2);
  fill(banks.intra_neg, BankRole::intra_neg);
  return banks;
}

NegativeDraw sample_negatives(int n, int k, int i, Rng& rng) {
  if (i < 0 || i >= n) throw std::out_of_range("positive index outside bank");
  if (k < 1 || k > n - 1)
    throw std::invalid_argument("negative count k must satisfy 1 <= k <= N-1");
  NegativeDraw draw;
  draw.positive_index = i;
  draw.indices_view2.resize(k);
  for (int j = 0; j < k; ++j) {
    // Uniform over {0..n-1} minus the positive, with replacement.
    int r = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(n - 1)));
    if (r >= i) ++r;
    draw.indices_view2[j] = r;
  }
  draw.indices_neg.resize(k + 1);
  for (int j = 0; j <= k; ++j)
    draw.indices_neg[j] =
        static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(n)));
  return draw;
}

double critic(const EmbeddingVector& a, const EmbeddingVector& b, double tau) {
  if (!(tau > 0)) throw std::invalid_argument("temperature must be positive");
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("critic inputs must share a nonzero dimension");
  const int d = static_cast<int>(a.size());
  const double na = checked_norm(a.data(), d, "critic input");
  const double nb = checked_norm(b.data(), d, "critic input");
  double dot = 0;
  for (int j = 0; j < d; ++j) dot += a[j] * b[j];
  return std::exp(dot / (na * nb) / tau);
}

DirectionalLoss loss_one_direction(const EmbeddingVector& anchor,
                                   const EmbeddingVector& positive,
                                   const MemoryBank& bank_other,
                                   const MemoryBank& bank_neg,
                                   const NegativeDraw& draw, double tau) {
  if (!(tau > 0)) throw std::invalid_argument("temperature must be positive");
  const int d = static_cast<int>(anchor.size());
  if (d < 1 || positive.size() != anchor.size())
    throw std::invalid_argument("anchor and positive must share a dimension");
  if (bank_other.dim != d || bank_neg.dim != d)
    throw std::invalid_argument("bank dimension mismatch");

  const double anorm = checked_norm(anchor.data(), d, "loss anchor");
  const double pnorm = checked_norm(positive.data(), d, "loss positive");

  // Term order: positive, then view-2 rows, then intra-negative rows.
  const std::size_t terms =
      1 + draw.indices_view2.size() + draw.indices_neg.size();
  std::vector<const double*> rows(terms);
  std::vector<double> inv_norms(terms);
  rows[0] = positive.data();
  inv_norms[0] = 1.0 / pnorm;
  std::size_t m = 1;
  for (int idx : draw.indices_view2) {
    rows[m] = bank_other.row(idx);
    inv_norms[m] = 1.0 / checked_norm(rows[m], d, "bank row");
    ++m;
  }
  for (int idx : draw.indices_neg) {
    rows[m] = bank_neg.row(idx);
    inv_norms[m] = 1.0 / checked_norm(rows[m], d, "bank row");
    ++m;
  }

  std::vector<double> cosines(terms);
  const double inv_anorm = 1.0 / anorm;
  for (std::size_t j = 0; j < terms; ++j) {
    double dot = 0;
    const double* r = rows[j];
    for (int q = 0; q < d; ++q) dot += anchor[q] * r[q];
    cosines[j] = dot * inv_anorm * inv_norms[j];
  }

  // Max-shifted softmax over scores cos/tau; the positive is term 0.
  const double inv_tau = 1.0 / tau;
  double max_score = cosines[0] * inv_tau;
  for (std::size_t j = 1; j < terms; ++j)
    max_score = std::max(max_score, cosines[j] * inv_tau);
  double denom = 0;
  std::vector<double> probs(terms);
  for (std::size_t j = 0; j < terms; ++j) {
    probs[j] = std::exp(cosines[j] * inv_tau - max_score);
    denom += probs[j];
  }
  for (double& p : probs) p /= denom;

  DirectionalLoss out;
  out.denom_terms = static_cast<int>(terms);
  out.loss = -cosines[0] * inv_tau + max_score + std::log(denom);
  if (!std::isfinite(out.loss))
    throw NumericError("contrastive loss is not finite");

  // d(cos_j)/d(anchor) = (b_hat_j - cos_j * a_hat) / |a|; coefficient on
  // term j is (P_j - [j == 0]) / tau.
  out.grad_anchor.assign(d, 0.0);
  out.grad_positive.assign(d, 0.0);
  for (std::size_t j = 0; j < terms; ++j) {
    const double coeff = (probs[j] - (j == 0 ? 1.0 : 0.0)) * inv_tau * inv_anorm;
    if (coeff == 0) continue;
    const double* r = rows[j];
    const double rn = inv_norms[j];
    const double cj = cosines[j];
    for (int q = 0; q < d; ++q)
      out.grad_anchor[q] += coeff * (r[q] * rn - cj * anchor[q] * inv_anorm);
  }
  {
    const double coeff = (probs[0] - 1.0) * inv_tau * inv_norms[0];
    const double c0 = cosines[0];
    for (int q = 0; q < d; ++q)
      out.grad_positive[q] =
          coeff * (anchor[q] * inv_anorm - c0 * positive[q] * inv_norms[0]);
  }
  return out;
}

TotalLoss total_loss(const EmbeddingVector& v1, const EmbeddingVector& v2,
                     const MemoryBanks& banks, const NegativeDraw& draw1,
                     const NegativeDraw& draw2, double tau) {
  TotalLoss out;
  out.dir1 = loss_one_direction(v1, v2, banks.view2, banks.intra_neg, draw1, tau);
  out.dir2 = loss_one_direction(v2, v1, banks.view1, banks.intra_neg, draw2, tau);
  out.loss = out.dir1.loss + out.dir2.loss;
  const std::size_t d = v1.size();
  out.grad_v1.resize(d);
  out.grad_v2.resize(d);
  for (std::size_t q = 0; q < d; ++q) {
    out.grad_v1[q] = out.dir1.grad_anchor[q] + out.dir2.grad_positive[q];
    out.grad_v2[q] = out.dir1.grad_positive[q] + out.dir2.grad_anchor[q];
  }
  return out;
}

FetchedWeights fetch_weights(const MemoryBanks& banks,
                             const NegativeDraw& draw) {
  FetchedWeights out;
  out.dim = banks.view1.dim;
  auto gather = [&](const MemoryBank& bank, const std::vector<int>& idx,
                    std::vector<double>& dst) {
    dst.resize(idx.size() * static_cast<std::size_t>(bank.dim));
    double* p = dst.data();
    for (int i : idx) {
      const double* r = bank.row(i);
      std::copy_n(r, bank.dim, p);
      p += bank.dim;
    }
  };
  gather(banks.view1, draw.indices_view2, out.w1);
  gather(banks.view2, draw.indices_view2, out.w2);
  gather(banks.intra_neg, draw.indices_neg, out.wneg);
  auto concat = [](const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> c;
    c.reserve(a.size() + b.size());
    c.insert(c.end(), a.begin(), a.end());
    c.insert(c.end(), b.begin(), b.end());
    return c;
  };
  out.cat1 = concat(out.w1, out.wneg);
  out.cat2 = concat(out.w2, out.wneg);
  return out;
}

void bank_update(MemoryBank& bank, int i, const EmbeddingVector& v,
                 double momentum) {
  if (static_cast<int>(v.size()) != bank.dim)
    throw std::invalid_argument("embedding dimension does not match bank");
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw std::invalid_argument("bank momentum must lie in [0, 1)");
  double* r = bank.row(i);
  if (momentum == 0.0) {
    std::copy(v.begin(), v.end(), r);
    return;
  }
  for (int j = 0; j < bank.dim; ++j)
    r[j] = momentum * r[j] + (1.0 - momentum) * v[j];
  const double norm = checked_norm(r, bank.dim, "bank momentum update");
  for (int j = 0; j < bank.dim; ++j) r[j] /= norm;
}

namespace {
constexpr std::string_view kBankMagic = "IICBNK1";
constexpr std::uint64_t kMaxBankElems = 1ull << 30;
}  // namespace

void save_bank(std::ostream& os, const MemoryBank& bank) {
  bin::write_magic(os, kBankMagic);
  const std::uint8_t role = static_cast<std::uint8_t>(bank.role);
  bin::write_bytes(os, &role, 1);
  bin::write_u32(os, static_cast<std::uint32_t>(bank.rows));
  bin::write_u32(os, static_cast<std::uint32_t>(bank.dim));
  bin::write_f64_seq(os, bank.data.data(), bank.data.size());
}

MemoryBank load_bank(std::istream& is) {
  bin::expect_magic(is, kBankMagic, "bank checkpoint");
  std::uint8_t role = 0;
  bin::read_bytes(is, &role, 1, "bank role");
  if (role > 2) throw DataError("bank checkpoint has unknown role");
  MemoryBank bank;
  bank.role = static_cast<BankRole>(role);
  const std::uint32_t rows = bin::read_u32(is, "bank rows");
  const std::uint32_t dim = bin::read_u32(is, "bank dim");
  if (rows < 1 || dim < 2) throw DataError("bank checkpoint shape too small");
  if (static_cast<std::uint64_t>(rows) * dim > kMaxBankElems)
    throw DataError("bank checkpoint header too large");
  bank.rows = static_cast<int>(rows);
  bank.dim = static_cast<int>(dim);
  bank.data.resize(static_cast<std::size_t>(rows) * dim);
  bin::read_f64_seq(is, bank.data.data(), bank.data.size(), "bank rows");
  for (int i = 0; i < bank.rows; ++i) {
    const double n = vec_norm(bank.row(i), bank.dim);
    if (!std::isfinite(n) || std::abs(n - 1.0) > 1e-6)
      throw DataError("bank checkpoint row " + std::to_string(i) +
                      " is not unit-norm");
  }
  return bank;
}

void save_banks(const std::filesystem::path& path, const MemoryBanks& banks) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  save_bank(os, banks.view1);
  save_bank(os, banks.view2);
  save_bank(os, banks.intra_neg);
  os.flush();
  if (!os) throw DataError("write failed: " + path.string());
}

MemoryBanks load_banks(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path.string());
  MemoryBanks banks;
  banks.view1 = load_bank(is);
  banks.view2 = load_bank(is);
  banks.intra_neg = load_bank(is);
  bin::expect_eof(is, "bank records");
  if (banks.view1.role != BankRole::view1 ||
      banks.view2.role != BankRole::view2 ||
      banks.intra_neg.role != BankRole::intra_neg)
    throw DataError("bank records out of order in " + path.string());
  const bool same_shape = banks.view1.rows == banks.view2.rows &&
                          banks.view1.rows == banks.intra_neg.rows &&
                          banks.view1.dim == banks.view2.dim &&
                          banks.view1.dim == banks.intra_neg.dim;
  if (!same_shape) throw DataError("bank records disagree on shape");
  return banks;
}

}  // namespace iic
