#include "ovw/gradients.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "ovw/errors.hpp"

namespace ovw::loss {
namespace {

using Flat = std::vector<double>;

Tensor random_tensor(Shape shape, std::mt19937_64& gen, double lo, double hi) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> d(n);
  for (double& v : d) v = u(gen);
  return Tensor(std::move(shape), std::move(d));
}

std::size_t random_extent(std::mt19937_64& gen, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(gen);
}

double weighted_sum(const Tensor& weights, const Tensor& values) {
  double s = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) s += weights.data()[i] * values.data()[i];
  return s;
}

Flat concat(const Tensor& a, const Tensor& b) {
  Flat out(a.values());
  out.insert(out.end(), b.data().begin(), b.data().end());
  return out;
}

Tensor view(const Flat& x, std::size_t offset, const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return Tensor(shape, Flat(x.begin() + static_cast<std::ptrdiff_t>(offset),
                            x.begin() + static_cast<std::ptrdiff_t>(offset + n)));
}

struct Instance {
  Flat point;
  Flat analytic;
  std::function<double(const Flat&)> objective;
};

double compare_with_finite_differences(const Instance& inst, double eps) {
  Flat x = inst.point;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + eps;
    const double up = inst.objective(x);
    x[i] = orig - eps;
    const double down = inst.objective(x);
    x[i] = orig;
    const double numeric = (up - down) / (2.0 * eps);
    const double a = inst.analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

Instance matmul_instance(std::mt19937_64& gen) {
  const std::size_t m = random_extent(gen, 1, 5), k = random_extent(gen, 1, 5), n = random_extent(gen, 1, 5);
  const Tensor a = random_tensor({m, k}, gen, -1, 1);
  const Tensor b = random_tensor({k, n}, gen, -1, 1);
  const Tensor r = random_tensor({m, n}, gen, -1, 1);
  return {a.values(), matmul_grad_lhs(r, b).values(),
          [=](const Flat& x) { return weighted_sum(r, matmul(Tensor({m, k}, x), b)); }};
}

Instance eq1_instance(std::mt19937_64& gen) {
  const std::size_t k = random_extent(gen, 1, 6), c = random_extent(gen, 1, 6), d = random_extent(gen, 2, 8);
  const Tensor e = random_tensor({k, d}, gen, -1, 1);
  const Tensor w = random_tensor({c, d}, gen, -1, 1);
  const double alpha = std::uniform_real_distribution<double>(0.5, 3.0)(gen);
  const double beta = std::uniform_real_distribution<double>(-1.0, 1.0)(gen);
  const Tensor r = random_tensor({k, c}, gen, -1, 1);
  const SimilarityGrads g = contrastive_similarity_grad(e, w, alpha, r);
  return {concat(e, w), concat(g.embeddings, g.text), [=](const Flat& x) {
            const auto s = head::contrastive_similarity(view(x, 0, {k, d}), view(x, k * d, {c, d}), alpha, beta);
            return weighted_sum(r, s.values);
          }};
}

Instance eq2_instance(std::mt19937_64& gen) {
  const std::size_t h = random_extent(gen, 1, 4), w = random_extent(gen, 1, 4), d = random_extent(gen, 2, 8);
  const std::size_t c = random_extent(gen, 1, 6);
  const Tensor x = random_tensor({h, w, d}, gen, -1, 1);
  const Tensor text = random_tensor({c, d}, gen, -1, 1);
  const Tensor r = random_tensor({h, w, d}, gen, -1, 1);
  return {x.values(), max_sigmoid_attention_grad(x, text, r).values(), [=](const Flat& p) {
            return weighted_sum(r, pan::max_sigmoid_attention(Tensor({h, w, d}, p), text));
          }};
}

Instance eq3_instance(std::mt19937_64& gen) {
  const std::size_t heads = random_extent(gen, 1, 3);
  const std::size_t d = heads * 2 * random_extent(gen, 1, 2);
  const std::size_t c = random_extent(gen, 1, 5);
  const std::size_t t = pan::kPooledTokens;
  const Tensor text = random_tensor({c, d}, gen, -1, 1);
  const Tensor tokens = random_tensor({t, d}, gen, -1, 1);
  pan::AttentionParams p{heads, random_tensor({d, d}, gen, -1, 1), random_tensor({d, d}, gen, -1, 1),
                         random_tensor({d, d}, gen, -1, 1), random_tensor({d, d}, gen, -1, 1)};
  const Tensor r = random_tensor({c, d}, gen, -1, 1);
  const AttentionGrads g = attend_text_grad(text, tokens, p, r);
  return {concat(text, tokens), concat(g.text, g.tokens), [=](const Flat& x) {
            return weighted_sum(r, pan::attend_text(view(x, 0, {c, d}), view(x, c * d, {t, d}), p));
          }};
}

Instance contrastive_instance(std::mt19937_64& gen) {
  const std::size_t k = random_extent(gen, 1, 8), c = random_extent(gen, 2, 8);
  const Tensor s = random_tensor({k, c}, gen, -3, 3);
  Assignment assign;
  assign.labels.resize(k);
  std::bernoulli_distribution positive(0.6);
  for (std::size_t i = 0; i < k; ++i)
    if (positive(gen)) assign.labels[i] = Positive{0, random_extent(gen, 0, c - 1), 1.0};
  if (assign.positive_count() == 0) assign.labels[0] = Positive{0, random_extent(gen, 0, c - 1), 1.0};
  const Tensor g = contrastive_loss_grad({s, 1.0, 0.0}, assign);
  return {s.values(), g.values(), [=](const Flat& x) {
            return region_text_contrastive_loss({Tensor({k, c}, x), 1.0, 0.0}, assign);
          }};
}

Instance iou_instance(std::mt19937_64& gen) {
  std::uniform_real_distribution<double> pos(0.0, 100.0), size(10.0, 60.0), jitter(-0.3, 0.3);
  const double gx = pos(gen), gy = pos(gen), gw = size(gen), gh = size(gen);
  const Box gt{gx, gy, gx + gw, gy + gh};
  const Box pred{gx + jitter(gen) * gw, gy + jitter(gen) * gh, gx + gw + jitter(gen) * gw, gy + gh + jitter(gen) * gh};
  const auto g = iou_loss_grad(pred, gt);
  return {Flat{pred.x1, pred.y1, pred.x2, pred.y2}, Flat(g.begin(), g.end()),
          [=](const Flat& x) { return iou_loss(Box{x[0], x[1], x[2], x[3]}, gt); }};
}

Instance dfl_instance(std::mt19937_64& gen) {
  const std::size_t bins = random_extent(gen, 3, 16);
  const Tensor logits = random_tensor({4, bins}, gen, -2, 2);
  std::uniform_real_distribution<double> target(0.0, static_cast<double>(bins - 1));
  std::array<double, 4> y{};
  for (double& v : y) v = target(gen);
  return {logits.values(), dfl_loss_grad(logits, y).values(),
          [=](const Flat& x) { return dfl_loss(Tensor({4, bins}, x), y); }};
}

using Factory = Instance (*)(std::mt19937_64&);

Factory factory_for(std::string_view op) {
  if (op == "matmul") return matmul_instance;
  if (op == "eq1") return eq1_instance;
  if (op == "eq2") return eq2_instance;
  if (op == "eq3") return eq3_instance;
  if (op == "contrastive") return contrastive_instance;
  if (op == "iou") return iou_instance;
  if (op == "dfl") return dfl_instance;
  return nullptr;
}

}  // namespace

Tensor matmul_grad_lhs(const Tensor& upstream, const Tensor& b) { return matmul_transposed(upstream, b); }

SimilarityGrads contrastive_similarity_grad(const Tensor& embeddings, const Tensor& text, double alpha,
                                            const Tensor& upstream) {
  const Tensor e_hat = l2_normalize(embeddings);
  const Tensor w_hat = l2_normalize(text);
  // Gradient with respect to the normalized rows, then through x / |x|:
  // d/dx = (g - x_hat <x_hat, g>) / |x|.
  auto through_norm = [](const Tensor& raw, const Tensor& unit, const Tensor& g_unit) {
    std::vector<double> out(raw.size());
    const std::size_t d = raw.cols();
    for (std::size_t r = 0; r < raw.rows(); ++r) {
      const auto x = raw.row(r);
      const auto u = unit.row(r);
      const auto g = g_unit.row(r);
      double norm = 0.0, dot = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        norm += x[i] * x[i];
        dot += u[i] * g[i];
      }
      norm = std::sqrt(norm);
      for (std::size_t i = 0; i < d; ++i) out[r * d + i] = (g[i] - u[i] * dot) / norm;
    }
    return Tensor(raw.shape(), std::move(out));
  };
  const Tensor g_e_hat = scale(matmul(upstream, w_hat), alpha);
  const Tensor g_w_hat = scale(matmul(transpose(upstream), e_hat), alpha);
  return {through_norm(embeddings, e_hat, g_e_hat), through_norm(text, w_hat, g_w_hat)};
}

Tensor max_sigmoid_attention_grad(const Tensor& x, const Tensor& text, const Tensor& upstream) {
  const std::size_t d = x.extent(2);
  const std::size_t positions = x.extent(0) * x.extent(1);
  const Tensor flat = x.reshaped({positions, d});
  const Tensor logits = matmul_transposed(flat, text);
  std::vector<double> out(x.size());
  for (std::size_t p = 0; p < positions; ++p) {
    const auto row = logits.row(p);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    const double gate = sigmoid(row[best]);
    const auto xp = flat.row(p);
    const auto up = upstream.data().subspan(p * d, d);
    double r_dot_x = 0.0;
    for (std::size_t i = 0; i < d; ++i) r_dot_x += up[i] * xp[i];
    const double through_gate = r_dot_x * gate * (1.0 - gate);
    const auto w = text.row(best);
    for (std::size_t i = 0; i < d; ++i) out[p * d + i] = up[i] * gate + through_gate * w[i];
  }
  return Tensor(x.shape(), std::move(out));
}

AttentionGrads attend_text_grad(const Tensor& text, const Tensor& tokens, const pan::AttentionParams& p,
                                const Tensor& upstream) {
  const std::size_t c = text.rows(), t = tokens.rows(), d = text.cols();
  const std::size_t dh = d / p.heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const Tensor q = matmul(text, p.query);
  const Tensor k = matmul(tokens, p.key);
  const Tensor v = matmul(tokens, p.value);
  const Tensor d_merged = matmul_transposed(upstream, p.output);  // [C x D]

  std::vector<double> dq(c * d, 0.0), dk(t * d, 0.0), dv(t * d, 0.0);
  for (std::size_t h = 0; h < p.heads; ++h) {
    const std::size_t lo = h * dh, hi = lo + dh;
    const Tensor qh = slice_last(q, lo, hi), kh = slice_last(k, lo, hi), vh = slice_last(v, lo, hi);
    const Tensor a = softmax_lastdim(scale(matmul_transposed(qh, kh), sc));  // [C x T]
    const Tensor d_oh = slice_last(d_merged, lo, hi);                       // [C x dh]
    const Tensor d_a = matmul_transposed(d_oh, vh);                         // [C x T]
    const Tensor d_vh = matmul(transpose(a), d_oh);                         // [T x dh]
    std::vector<double> ds(c * t);
    for (std::size_t i = 0; i < c; ++i) {
      double row_dot = 0.0;
      for (std::size_t j = 0; j < t; ++j) row_dot += d_a(i, j) * a(i, j);
      for (std::size_t j = 0; j < t; ++j) ds[i * t + j] = a(i, j) * (d_a(i, j) - row_dot) * sc;
    }
    const Tensor d_s({c, t}, std::move(ds));
    const Tensor d_qh = matmul(d_s, kh);             // [C x dh]
    const Tensor d_kh = matmul(transpose(d_s), qh);  // [T x dh]
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < dh; ++j) dq[i * d + lo + j] = d_qh(i, j);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < dh; ++j) {
        dk[i * d + lo + j] = d_kh(i, j);
        dv[i * d + lo + j] = d_vh(i, j);
      }
  }
  const Tensor d_text = add(upstream, matmul_transposed(Tensor({c, d}, std::move(dq)), p.query));
  const Tensor d_tokens = add(matmul_transposed(Tensor({t, d}, std::move(dk)), p.key),
                              matmul_transposed(Tensor({t, d}, std::move(dv)), p.value));
  return {d_text, d_tokens};
}

Tensor contrastive_loss_grad(const head::SimilarityMatrix& sim, const Assignment& assign) {
  const std::size_t k = sim.values.rows(), c = sim.values.cols();
  std::vector<double> out(k * c, 0.0);
  const std::size_t n = assign.positive_count();
  if (n == 0) return Tensor({k, c}, std::move(out));
  const Tensor probs = softmax_lastdim(sim.values);
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t p = 0; p < k; ++p) {
    if (!assign.labels[p]) continue;
    for (std::size_t j = 0; j < c; ++j) out[p * c + j] = probs(p, j) * inv;
    out[p * c + assign.labels[p]->text_index] -= inv;
  }
  return Tensor({k, c}, std::move(out));
}

std::array<double, 4> iou_loss_grad(const Box& pred, const Box& gt) {
  require_well_formed(pred, "iou_loss_grad");
  require_well_formed(gt, "iou_loss_grad");
  const double iw = std::min(pred.x2, gt.x2) - std::max(pred.x1, gt.x1);
  const double ih = std::min(pred.y2, gt.y2) - std::max(pred.y1, gt.y1);
  if (iw <= 0 || ih <= 0) return {0, 0, 0, 0};
  const double inter = iw * ih;
  const double uni = pred.area() + gt.area() - inter;
  const double pw = pred.x2 - pred.x1, ph = pred.y2 - pred.y1;
  // d inter / d coordinate; only the coordinate that bounds the overlap counts.
  const std::array<double, 4> d_inter = {pred.x1 > gt.x1 ? -ih : 0.0, pred.y1 > gt.y1 ? -iw : 0.0,
                                         pred.x2 < gt.x2 ? ih : 0.0, pred.y2 < gt.y2 ? iw : 0.0};
  const std::array<double, 4> d_area = {-ph, -pw, ph, pw};
  std::array<double, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    const double d_union = d_area[i] - d_inter[i];
    out[i] = -(d_inter[i] * uni - inter * d_union) / (uni * uni);
  }
  return out;
}

Tensor dfl_loss_grad(const Tensor& logits, std::span<const double, 4> targets) {
  const std::size_t bins = logits.extent(1);
  const Tensor probs = softmax_lastdim(logits);
  std::vector<double> out(probs.values());
  for (std::size_t side = 0; side < 4; ++side) {
    const double y = targets[side];
    if (!(y >= 0.0 && y < static_cast<double>(bins - 1))) throw InputError("dfl_loss_grad: target out of range");
    const auto left = static_cast<std::size_t>(std::floor(y));
    out[side * bins + left] -= static_cast<double>(left + 1) - y;
    out[side * bins + left + 1] -= y - static_cast<double>(left);
  }
  for (double& v : out) v /= 4.0;
  return Tensor(logits.shape(), std::move(out));
}

const std::vector<std::string>& registered_gradient_ops() {
  static const std::vector<std::string> ops = {"matmul", "eq1", "eq2", "eq3", "contrastive", "iou", "dfl"};
  return ops;
}

GradCheckResult grad_check(std::string_view op, std::uint64_t seed, double eps) {
  const Factory make = factory_for(op);
  if (!make) throw InputError("grad_check: no analytic gradient registered for \"" + std::string(op) + "\"");
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw InputError("grad_check: eps must lie in [1e-7, 1e-3]");
  std::mt19937_64 gen(seed);
  const Instance inst = make(gen);
  GradCheckResult r;
  r.op = std::string(op);
  r.seed = seed;
  r.eps = eps;
  r.components = inst.point.size();
  r.max_rel_error = compare_with_finite_differences(inst, eps);
  return r;
}

}  // namespace ovw::loss
