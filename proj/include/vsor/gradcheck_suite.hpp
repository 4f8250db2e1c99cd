#pragma once

// Finite-difference checks for every differentiable op and both relation
// modules at tiny shapes. Each case contracts the op output with a random
// constant cotangent so no gradient entry is structurally zero.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vsor/autodiff.hpp"
#include "vsor/gradcheck.hpp"
#include "vsor/iar.hpp"
#include "vsor/idr.hpp"
#include "vsor/ranking_loss.hpp"
#include "vsor/rng.hpp"

namespace vsor {

inline constexpr double kGradCheckTolerance = 1e-5;

struct GradCheckProblem {
  ScalarFn fn;
  std::vector<Tensor> inputs;
};

struct GradCheckCase {
  std::string name;
  std::function<GradCheckProblem(Rng&)> make;
};

struct GradCheckRow {
  std::string name;
  std::size_t seeds = 0;
  double max_error = 0.0;
  bool passed = false;
};

namespace detail {

/// sum(out ⊙ R) for a constant R drawn once per problem.
inline Var contract(Var out, const Tensor& cotangent) {
  return sum(mul(out, out.tape().constant(cotangent)));
}

/// Wraps an op so the scalar is its contraction with a fresh cotangent.
template <class Op>
GradCheckProblem contracted(Rng& rng, const Shape& out_shape, std::vector<Tensor> inputs, Op op) {
  Tensor r = uniform_tensor(out_shape, 1.0, rng);
  return {[op, r](Tape&, std::span<const Var> v) { return contract(op(v), r); }, std::move(inputs)};
}

/// Uniform values whose magnitude is at least `gap`, keeping relu off its kink.
inline Tensor away_from_zero(Shape shape, double gap, Rng& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> mag(gap, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (double& v : t.data()) v = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

inline std::size_t draw(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline BinaryMask random_rect_mask(std::size_t width, std::size_t height, Rng& rng) {
  BinaryMask m(width, height, 0);
  const std::size_t x0 = draw(rng, 0, width - 2), y0 = draw(rng, 0, height - 2);
  const std::size_t x1 = draw(rng, x0 + 1, width), y1 = draw(rng, y0 + 1, height);
  for (std::size_t y = y0; y < y1; ++y) {
    for (std::size_t x = x0; x < x1; ++x) m(y, x) = 1;
  }
  return m;
}

}  // namespace detail

inline std::vector<GradCheckCase> gradcheck_cases() {
  using detail::contracted;
  using detail::draw;
  std::vector<GradCheckCase> cases;

  cases.push_back({"matmul", [](Rng& rng) {
    const std::size_t m = draw(rng, 1, 3), k = draw(rng, 1, 4), n = draw(rng, 1, 3);
    return contracted(rng, {m, n}, {uniform_tensor({m, k}, 1, rng), uniform_tensor({k, n}, 1, rng)},
                      [](std::span<const Var> v) { return matmul(v[0], v[1]); });
  }});
  cases.push_back({"batched_matmul", [](Rng& rng) {
    const std::size_t b = draw(rng, 1, 3), m = draw(rng, 1, 3), k = draw(rng, 1, 4), n = draw(rng, 1, 3);
    return contracted(rng, {b, m, n}, {uniform_tensor({b, m, k}, 1, rng), uniform_tensor({b, k, n}, 1, rng)},
                      [](std::span<const Var> v) { return batched_matmul(v[0], v[1]); });
  }});
  cases.push_back({"conv1x1", [](Rng& rng) {
    const std::size_t n = draw(rng, 1, 3), c = draw(rng, 1, 4), co = draw(rng, 1, 4);
    return contracted(rng, {n, co, 2, 2},
                      {uniform_tensor({n, c, 2, 2}, 1, rng), uniform_tensor({co, c}, 1, rng),
                       uniform_tensor({co}, 1, rng)},
                      [](std::span<const Var> v) { return conv1x1(v[0], v[1], v[2]); });
  }});
  cases.push_back({"scaled_softmax", [](Rng& rng) {
    const std::size_t b = draw(rng, 1, 3), r = draw(rng, 1, 4), c = draw(rng, 2, 4), d = draw(rng, 1, 4);
    return contracted(rng, {b, r, c}, {uniform_tensor({b, r, c}, 2, rng)},
                      [d](std::span<const Var> v) { return scaled_softmax(v[0], d); });
  }});
  cases.push_back({"mean_axis", [](Rng& rng) {
    const std::size_t a = draw(rng, 1, 3), b = draw(rng, 1, 3), c = draw(rng, 1, 3), axis = draw(rng, 0, 2);
    Shape out{a, b, c};
    out.erase(out.begin() + static_cast<long>(axis));
    return contracted(rng, out, {uniform_tensor({a, b, c}, 1, rng)},
                      [axis](std::span<const Var> v) { return mean_axis(v[0], axis); });
  }});
  cases.push_back({"linear", [](Rng& rng) {
    const std::size_t n = draw(rng, 1, 3), d = draw(rng, 1, 4), o = draw(rng, 1, 3);
    return contracted(rng, {n, o},
                      {uniform_tensor({n, d}, 1, rng), uniform_tensor({o, d}, 1, rng), uniform_tensor({o}, 1, rng)},
                      [](std::span<const Var> v) { return linear(v[0], v[1], v[2]); });
  }});
  cases.push_back({"reshape", [](Rng& rng) {
    const std::size_t a = draw(rng, 1, 3), b = draw(rng, 1, 4);
    return contracted(rng, {b, a}, {uniform_tensor({a, b}, 1, rng)},
                      [a, b](std::span<const Var> v) { return reshape(v[0], {b, a}); });
  }});
  cases.push_back({"transpose_last2", [](Rng& rng) {
    const std::size_t a = draw(rng, 1, 3), b = draw(rng, 1, 3), c = draw(rng, 1, 4);
    return contracted(rng, {a, c, b}, {uniform_tensor({a, b, c}, 1, rng)},
                      [](std::span<const Var> v) { return transpose_last2(v[0]); });
  }});
  cases.push_back({"add", [](Rng& rng) {
    const Shape s{draw(rng, 1, 3), draw(rng, 1, 4)};
    return contracted(rng, s, {uniform_tensor(s, 1, rng), uniform_tensor(s, 1, rng)},
                      [](std::span<const Var> v) { return add(v[0], v[1]); });
  }});
  cases.push_back({"sub", [](Rng& rng) {
    const Shape s{draw(rng, 1, 3), draw(rng, 1, 4)};
    return contracted(rng, s, {uniform_tensor(s, 1, rng), uniform_tensor(s, 1, rng)},
                      [](std::span<const Var> v) { return sub(v[0], v[1]); });
  }});
  cases.push_back({"mul", [](Rng& rng) {
    const Shape s{draw(rng, 1, 3), draw(rng, 1, 4)};
    return contracted(rng, s, {uniform_tensor(s, 1, rng), uniform_tensor(s, 1, rng)},
                      [](std::span<const Var> v) { return mul(v[0], v[1]); });
  }});
  cases.push_back({"affine", [](Rng& rng) {
    const Shape s{draw(rng, 1, 3), draw(rng, 1, 4)};
    const double scale = std::uniform_real_distribution<double>(-2, 2)(rng);
    const double shift = std::uniform_real_distribution<double>(-1, 1)(rng);
    return contracted(rng, s, {uniform_tensor(s, 1, rng)},
                      [scale, shift](std::span<const Var> v) { return affine(v[0], scale, shift); });
  }});
  cases.push_back({"relu", [](Rng& rng) {
    const Shape s{draw(rng, 1, 3), draw(rng, 1, 4)};
    return contracted(rng, s, {detail::away_from_zero(s, 0.05, rng)},
                      [](std::span<const Var> v) { return relu(v[0]); });
  }});
  cases.push_back({"sum", [](Rng& rng) {
    const Shape s{draw(rng, 1, 3), draw(rng, 1, 4)};
    return contracted(rng, {1}, {uniform_tensor(s, 1, rng)}, [](std::span<const Var> v) { return sum(v[0]); });
  }});
  cases.push_back({"select", [](Rng& rng) {
    const std::size_t a = draw(rng, 1, 3), b = draw(rng, 1, 3), c = draw(rng, 1, 3), i = draw(rng, 0, a - 1);
    return contracted(rng, {b, c}, {uniform_tensor({a, b, c}, 1, rng)},
                      [i](std::span<const Var> v) { return select(v[0], i); });
  }});
  cases.push_back({"concat", [](Rng& rng) {
    const std::size_t n = draw(rng, 1, 3), a = draw(rng, 1, 3), b = draw(rng, 1, 3), axis = draw(rng, 0, 1);
    const Shape sa = axis == 0 ? Shape{a, n} : Shape{n, a};
    const Shape sb = axis == 0 ? Shape{b, n} : Shape{n, b};
    const Shape so = axis == 0 ? Shape{a + b, n} : Shape{n, a + b};
    return contracted(rng, so, {uniform_tensor(sa, 1, rng), uniform_tensor(sb, 1, rng)},
                      [axis](std::span<const Var> v) { return concat(v, axis); });
  }});
  cases.push_back({"stack", [](Rng& rng) {
    const std::size_t t = draw(rng, 1, 3), a = draw(rng, 1, 3), b = draw(rng, 1, 3);
    std::vector<Tensor> parts;
    for (std::size_t i = 0; i < t; ++i) parts.push_back(uniform_tensor({a, b}, 1, rng));
    return contracted(rng, {t, a, b}, std::move(parts), [](std::span<const Var> v) { return stack(v); });
  }});
  cases.push_back({"rank_loss", [](Rng& rng) {
    // Scores on a lattice offset from the margin so no pair sits on a hinge kink.
    const std::size_t n = draw(rng, 2, 4);
    std::vector<int> ranks(n);
    std::iota(ranks.begin(), ranks.end(), 1);
    std::shuffle(ranks.begin(), ranks.end(), rng);
    Tensor scores({n});
    std::uniform_real_distribution<double> jitter(-0.1, 0.1);
    for (std::size_t i = 0; i < n; ++i) scores[i] = 0.3 * static_cast<double>(draw(rng, 0, 6)) + 0.11 + jitter(rng) * 0.2;
    return GradCheckProblem{[ranks](Tape&, std::span<const Var> v) { return rank_loss(v[0], ranks, 0.5); },
                            {scores}};
  }});

  cases.push_back({"iar_forward", [](Rng& rng) {
    const std::size_t n = draw(rng, 1, 3), c = draw(rng, 1, 4);
    std::vector<Tensor> in{uniform_tensor({n, c, 2, 2}, 1, rng), uniform_tensor({c, c}, 1, rng),
                           uniform_tensor({c}, 0.5, rng), uniform_tensor({c, c}, 1, rng),
                           uniform_tensor({c}, 0.5, rng)};
    Tensor r_rel = uniform_tensor({n, c, 2, 2}, 1, rng);
    Tensor r_val = uniform_tensor({n, c, 2, 2}, 1, rng);
    return GradCheckProblem{[r_rel, r_val](Tape&, std::span<const Var> v) {
                              IarVars p{{v[1], v[2]}, {v[3], v[4]}};
                              IarOutput out = iar_forward(v[0], p);
                              return add(detail::contract(out.relation, r_rel), detail::contract(out.value, r_val));
                            },
                            std::move(in)};
  }});

  cases.push_back({"idr_forward", [](Rng& rng) {
    // T ≥ 2 so the temporal key/query receive a non-trivial gradient. The query
    // bias is held constant: it shifts every attention logit row uniformly, so
    // its exact gradient is zero and a relative error is meaningless there.
    const std::size_t t = draw(rng, 2, 3), c = draw(rng, 1, 4), hw = 4;
    std::vector<std::size_t> objects(t);
    std::vector<std::vector<BinaryMask>> masks(t);
    std::vector<Tensor> in;
    for (std::size_t f = 0; f < t; ++f) {
      objects[f] = draw(rng, 1, 3);
      for (std::size_t i = 0; i < objects[f]; ++i) masks[f].push_back(detail::random_rect_mask(6, 5, rng));
      in.push_back(uniform_tensor({objects[f], c, 2, 2}, 1, rng));  // relation
      in.push_back(uniform_tensor({objects[f], c, 2, 2}, 1, rng));  // value
    }
    for (int k = 0; k < 3; ++k) {
      in.push_back(uniform_tensor({c, c}, 1, rng));
      if (k != 1) in.push_back(uniform_tensor({c}, 0.5, rng));
    }
    Tensor q_bias = uniform_tensor({c}, 0.5, rng);
    in.push_back(uniform_tensor({c, hw}, 1, rng));
    in.push_back(uniform_tensor({c}, 0.5, rng));
    in.push_back(uniform_tensor({1, 2 * c}, 1, rng));
    in.push_back(uniform_tensor({1}, 0.5, rng));
    std::vector<Tensor> cot;
    for (std::size_t f = 0; f < t; ++f) cot.push_back(uniform_tensor({objects[f]}, 1, rng));
    return GradCheckProblem{[t, masks, cot, q_bias](Tape& tape, std::span<const Var> v) {
                              std::vector<FrameObjects> frames;
                              for (std::size_t f = 0; f < t; ++f) frames.push_back({v[2 * f], v[2 * f + 1], masks[f]});
                              const std::size_t o = 2 * t;
                              IdrVars idr{{v[o], v[o + 1]}, {v[o + 2], tape.constant(q_bias)}, {v[o + 3], v[o + 4]}};
                              RefinementVars refine{v[o + 5], v[o + 6], v[o + 7], v[o + 8]};
                              std::vector<IdrFrameOutput> out = idr_forward(frames, &idr, refine);
                              Var total = detail::contract(out[0].scores, cot[0]);
                              for (std::size_t f = 1; f < t; ++f) total = add(total, detail::contract(out[f].scores, cot[f]));
                              return total;
                            },
                            std::move(in)};
  }});
  return cases;
}

/// One row per case: worst relative error over `seeds` random instances.
inline std::vector<GradCheckRow> run_gradcheck_suite(std::uint64_t seed, std::size_t seeds = 20,
                                                     double fault_factor = 1.0,
                                                     double tolerance = kGradCheckTolerance) {
  std::vector<GradCheckRow> rows;
  const std::vector<GradCheckCase> cases = gradcheck_cases();
  for (std::size_t c = 0; c < cases.size(); ++c) {
    GradCheckRow row{cases[c].name, seeds, 0.0, true};
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng(derive_seed(seed, c, s));
      const GradCheckProblem problem = cases[c].make(rng);
      const double err = grad_check(problem.fn, problem.inputs, {.eps = 1e-5, .fault_factor = fault_factor});
      row.max_error = std::max(row.max_error, err);
    }
    row.passed = row.max_error < tolerance;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace vsor
