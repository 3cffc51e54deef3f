#pragma once

// Test-side reference computations, written independently of the library
// code they check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <vector>

#include "seqx/blackbox.hpp"
#include "seqx/rng.hpp"
#include "seqx/simulee.hpp"

namespace seqx::oracle {

// Direct inference-mode forward pass: explicit zero padding, loops in the
// most literal order.
inline double reference_logit(const BasicNetworkParams<double>& p, const Pixels& pixels) {
  auto block = [](const ConvBlockParams<double>& b, const std::vector<double>& in, std::size_t side) {
    const std::size_t cin = b.in_channels, cout = b.out_channels;
    std::vector<double> act(cout * side * side);
    for (std::size_t o = 0; o < cout; ++o) {
      for (std::size_t y = 0; y < side; ++y) {
        for (std::size_t x = 0; x < side; ++x) {
          double s = b.bias[o];
          for (std::size_t i = 0; i < cin; ++i) {
            for (int ky = 0; ky < 3; ++ky) {
              for (int kx = 0; kx < 3; ++kx) {
                const long yy = static_cast<long>(y) + ky - 1, xx = static_cast<long>(x) + kx - 1;
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(side) || xx >= static_cast<long>(side)) continue;
                s += b.weight[((o * cin + i) * 3 + static_cast<std::size_t>(ky)) * 3 + static_cast<std::size_t>(kx)] *
                     in[(i * side + static_cast<std::size_t>(yy)) * side + static_cast<std::size_t>(xx)];
              }
            }
          }
          s = std::max(s, 0.0);
          s = b.bn.gamma[o] * (s - b.bn.running_mean[o]) / std::sqrt(b.bn.running_var[o] + 1e-5) + b.bn.beta[o];
          act[(o * side + y) * side + x] = s;
        }
      }
    }
    const std::size_t h = side / 2;
    std::vector<double> pooled(cout * h * h);
    for (std::size_t o = 0; o < cout; ++o) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < h; ++x) {
          double m = -INFINITY;
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) m = std::max(m, act[(o * side + 2 * y + dy) * side + 2 * x + dx]);
          }
          pooled[(o * h + y) * h + x] = m;
        }
      }
    }
    return pooled;
  };
  std::vector<double> x(pixels.begin(), pixels.end());
  x = block(p.block1, x, 28);
  x = block(p.block2, x, 14);
  double logit = p.head_bias[0];
  for (std::size_t i = 0; i < x.size(); ++i) logit += p.head_weight[i] * x[i];
  return logit;
}

// Training-mode batch loss (batch-norm over the batch, biased variance),
// mean binary cross-entropy. `kinks`, if given, receives every ReLU sign and
// max-pool winner, so callers can tell whether two parameter settings lie in
// the same differentiable piece.
inline double reference_training_loss(const BasicNetworkParams<double>& p, std::span<const ImageInstance* const> batch,
                                      std::vector<std::uint32_t>* kinks = nullptr) {
  const std::size_t n = batch.size();
  std::vector<std::vector<double>> x(n);
  for (std::size_t b = 0; b < n; ++b) x[b].assign(batch[b]->pixels.begin(), batch[b]->pixels.end());
  auto block = [&](const ConvBlockParams<double>& bp, std::size_t side) {
    const std::size_t cin = bp.in_channels, cout = bp.out_channels, plane = side * side;
    std::vector<std::vector<double>> act(n, std::vector<double>(cout * plane));
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t o = 0; o < cout; ++o) {
        for (std::size_t y = 0; y < side; ++y) {
          for (std::size_t xx = 0; xx < side; ++xx) {
            double s = bp.bias[o];
            for (std::size_t i = 0; i < cin; ++i) {
              for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                  const long sy = static_cast<long>(y) + ky - 1, sx = static_cast<long>(xx) + kx - 1;
                  if (sy < 0 || sx < 0 || sy >= static_cast<long>(side) || sx >= static_cast<long>(side)) continue;
                  s += bp.weight[((o * cin + i) * 3 + static_cast<std::size_t>(ky)) * 3 + static_cast<std::size_t>(kx)] *
                       x[b][(i * side + static_cast<std::size_t>(sy)) * side + static_cast<std::size_t>(sx)];
                }
              }
            }
            if (kinks) kinks->push_back(s > 0);
            act[b][(o * side + y) * side + xx] = std::max(s, 0.0);
          }
        }
      }
    }
    for (std::size_t o = 0; o < cout; ++o) {
      double mean = 0, var = 0;
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t i = 0; i < plane; ++i) mean += act[b][o * plane + i];
      }
      mean /= static_cast<double>(n * plane);
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t i = 0; i < plane; ++i) var += (act[b][o * plane + i] - mean) * (act[b][o * plane + i] - mean);
      }
      var /= static_cast<double>(n * plane);
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t i = 0; i < plane; ++i) {
          double& v = act[b][o * plane + i];
          v = bp.bn.gamma[o] * (v - mean) / std::sqrt(var + 1e-5) + bp.bn.beta[o];
        }
      }
    }
    const std::size_t h = side / 2;
    for (std::size_t b = 0; b < n; ++b) {
      std::vector<double> pooled(cout * h * h);
      for (std::size_t o = 0; o < cout; ++o) {
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t xx = 0; xx < h; ++xx) {
            std::uint32_t win = 0;
            double m = -INFINITY;
            for (std::uint32_t k = 0; k < 4; ++k) {
              const double v = act[b][(o * side + 2 * y + k / 2) * side + 2 * xx + k % 2];
              if (v > m) {
                m = v;
                win = k;
              }
            }
            if (kinks) kinks->push_back(win);
            pooled[(o * h + y) * h + xx] = m;
          }
        }
      }
      x[b] = std::move(pooled);
    }
  };
  block(p.block1, 28);
  block(p.block2, 14);
  double loss = 0;
  for (std::size_t b = 0; b < n; ++b) {
    double z = p.head_bias[0];
    for (std::size_t i = 0; i < x[b].size(); ++i) z += p.head_weight[i] * x[b][i];
    const double y = batch[b]->true_label;
    loss += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  return loss / static_cast<double>(n);
}

struct TensorCheck {
  std::string name;
  std::size_t checked = 0;     // coordinates compared at the requested step
  std::size_t kinked = 0;      // coordinates whose +-step interval crosses a kink
  std::size_t refined = 0;     // kinked coordinates compared at a smaller, kink-free step
  std::size_t unresolved = 0;  // kinked coordinates still crossing at the smallest step
  double relative_error = 0;   // ||analytic - numeric|| / max(||analytic||, ||numeric||), checked + refined
  double relative_error_fixed_step = 0;  // every coordinate at the requested step, kinks included
};

// Library gradient against central differences of the reference loss.
// `per_tensor` coordinates are drawn per tensor (all of them when 0 or when
// the tensor is smaller). A coordinate whose interval moves a ReLU sign or a
// pool winner is retried with step/10, step/100, ... down to `min_step`.
inline std::vector<TensorCheck> gradient_check(const BasicNetworkParams<double>& params,
                                               std::span<const ImageInstance* const> batch, double step,
                                               std::size_t per_tensor = 0, std::uint64_t seed = 1,
                                               double min_step = 1e-8) {
  BasicNetworkParams<double> analytic;
  loss_and_gradient<double>(params, batch, analytic);
  std::vector<std::uint32_t> base_kinks, kinks;
  reference_training_loss(params, batch, &base_kinks);
  auto work = params;
  auto analytic_tensors = trainable_tensors(analytic);
  auto work_tensors = trainable_tensors(work);
  Rng rng(seed);
  std::vector<TensorCheck> out;
  for (std::size_t t = 0; t < work_tensors.size(); ++t) {
    auto& tensor = *work_tensors[t].second;
    std::vector<std::size_t> coords(tensor.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (per_tensor && per_tensor < coords.size()) coords = rng.sample(std::move(coords), per_tensor);
    TensorCheck check;
    check.name = std::string(work_tensors[t].first);
    double diff2 = 0, a2 = 0, n2 = 0, fixed_diff2 = 0, fixed_n2 = 0;
    // Central difference at step h; false when the interval crosses a kink.
    auto central = [&](std::size_t i, double h, double& numeric) {
      const double orig = tensor[i];
      bool smooth = true;
      tensor[i] = orig + h;
      kinks.clear();
      const double up = reference_training_loss(work, batch, &kinks);
      smooth = smooth && kinks == base_kinks;
      tensor[i] = orig - h;
      kinks.clear();
      const double down = reference_training_loss(work, batch, &kinks);
      smooth = smooth && kinks == base_kinks;
      tensor[i] = orig;
      numeric = (up - down) / (2 * h);
      return smooth;
    };
    for (std::size_t i : coords) {
      const double a = (*analytic_tensors[t].second)[i];
      double numeric = 0;
      bool smooth = central(i, step, numeric);
      fixed_diff2 += (a - numeric) * (a - numeric);
      fixed_n2 += numeric * numeric;
      a2 += a * a;
      if (smooth) {
        ++check.checked;
      } else {
        ++check.kinked;
        for (double h = step / 10; !smooth && h >= min_step * (1 - 1e-9); h /= 10) smooth = central(i, h, numeric);
        if (!smooth) {
          ++check.unresolved;
          continue;
        }
        ++check.refined;
      }
      diff2 += (a - numeric) * (a - numeric);
      n2 += numeric * numeric;
    }
    auto rel = [](double d2, double x2, double y2) {
      const double denom = std::max(std::sqrt(x2), std::sqrt(y2));
      return denom > 0 ? std::sqrt(d2) / denom : 0.0;
    };
    check.relative_error = rel(diff2, a2, n2);
    check.relative_error_fixed_step = rel(fixed_diff2, a2, fixed_n2);
    out.push_back(check);
  }
  return out;
}

// ---------------------------------------------------------------------------
// ProtoDash by exhaustive search.

inline double gaussian(const std::vector<double>& a, const std::vector<double>& b, double sigma) {
  double d2 = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
  return std::exp(-d2 / (2 * sigma * sigma));
}

// Solves A x = b by Gaussian elimination with partial pivoting; false if singular.
inline bool solve(std::vector<std::vector<double>> a, std::vector<double> b, std::vector<double>& x) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    }
    if (std::abs(a[piv][c]) < 1e-14) return false;
    std::swap(a[c], a[piv]);
    std::swap(b[c], b[piv]);
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
      b[r] -= f * b[c];
    }
  }
  x.assign(n, 0);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= a[i][k] * x[k];
    x[i] = s / a[i][i];
  }
  return true;
}

// max over w >= 0 of w.mu - w.K.w/2 restricted to `subset`: the optimum is
// the unconstrained optimum on some support, so try every support.
inline double best_objective(const std::vector<std::vector<double>>& K, const std::vector<double>& mu,
                             const std::vector<std::size_t>& subset) {
  double best = 0;  // empty support
  const std::size_t m = subset.size();
  for (std::size_t mask = 1; mask < (std::size_t{1} << m); ++mask) {
    std::vector<std::size_t> s;
    for (std::size_t i = 0; i < m; ++i) {
      if (mask >> i & 1) s.push_back(subset[i]);
    }
    std::vector<std::vector<double>> a(s.size(), std::vector<double>(s.size()));
    std::vector<double> b(s.size()), w;
    for (std::size_t i = 0; i < s.size(); ++i) {
      b[i] = mu[s[i]];
      for (std::size_t j = 0; j < s.size(); ++j) a[i][j] = K[s[i]][s[j]];
    }
    if (!solve(a, b, w)) continue;
    if (std::any_of(w.begin(), w.end(), [](double v) { return v < 0; })) continue;
    double g = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      g += w[i] * mu[s[i]];
      for (std::size_t j = 0; j < s.size(); ++j) g -= 0.5 * w[i] * K[s[i]][s[j]] * w[j];
    }
    best = std::max(best, g);
  }
  return best;
}

struct ExhaustiveResult {
  double objective = 0;
  std::vector<std::size_t> subset;
};

inline ExhaustiveResult exhaustive_protodash(const std::vector<std::vector<double>>& targets,
                                             const std::vector<std::vector<double>>& candidates, std::size_t m,
                                             double sigma) {
  const std::size_t n = candidates.size();
  std::vector<std::vector<double>> K(n, std::vector<double>(n));
  std::vector<double> mu(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) K[i][j] = gaussian(candidates[i], candidates[j], sigma);
    for (const auto& t : targets) mu[i] += gaussian(candidates[i], t, sigma);
    mu[i] /= static_cast<double>(targets.size());
  }
  ExhaustiveResult best;
  std::vector<bool> pick(n, false);
  std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(m), true);
  do {
    std::vector<std::size_t> s;
    for (std::size_t i = 0; i < n; ++i) {
      if (pick[i]) s.push_back(i);
    }
    const double g = best_objective(K, mu, s);
    if (g > best.objective) best = {g, s};
  } while (std::prev_permutation(pick.begin(), pick.end()));
  return best;
}

// ---------------------------------------------------------------------------
// Simulee: beliefs evolve independently of the explainee's answers, so the
// expected resultant after a run depends only on the sequence of targeted
// possibilities.

inline double expected_resultant(const SimuleeConfig& cfg, ExplainerKind kind, const std::vector<int>& targets) {
  std::array<double, 4> b = cfg.initial_belief;
  const auto k = static_cast<std::size_t>(kind);
  for (int target : targets) {
    for (int c = 0; c < 4; ++c) {
      double& v = b[static_cast<std::size_t>(c)];
      v += (c == target ? cfg.gain_target[k] : cfg.gain_spillover[k]) * (1 - v);
      v = 0.5 + (1 - cfg.decay) * (v - 0.5);
    }
  }
  double s = 0;
  for (double v : b) s += 3 * v;
  return s;
}

struct SequenceBound {
  double best = 0;         // best fixed target sequence
  double uniform_mean = 0; // i.i.d. uniform targets
};

inline SequenceBound sequence_bound(const SimuleeConfig& cfg, ExplainerKind kind, int iterations) {
  SequenceBound out{-INFINITY, 0};
  std::size_t total = 1;
  for (int i = 0; i < iterations; ++i) total *= 4;
  std::vector<int> seq(static_cast<std::size_t>(iterations));
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t c = code;
    for (auto& s : seq) {
      s = static_cast<int>(c % 4);
      c /= 4;
    }
    const double r = expected_resultant(cfg, kind, seq);
    out.best = std::max(out.best, r);
    out.uniform_mean += r / static_cast<double>(total);
  }
  return out;
}

}  // namespace seqx::oracle
