#include "mpc/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include <spdlog/spdlog.h>

namespace mpc {

void MaskPolicy::validate() const {
  if (!(select_ratio > 0.0 && select_ratio < 1.0)) throw Error("mask policy: select_ratio must be in (0, 1)");
  if (p_zero < 0.0 || p_random < 0.0 || p_keep < 0.0 || std::fabs(p_zero + p_random + p_keep - 1.0) > 1e-12) {
    throw Error("mask policy: action probabilities must be non-negative and sum to 1");
  }
}

std::vector<std::size_t> MaskPlan::positions() const {
  std::vector<std::size_t> out;
  out.reserve(masked.size());
  for (const auto& m : masked) out.push_back(m.position);
  return out;
}

bool MaskPlan::is_selected(std::size_t pos) const {
  return std::binary_search(masked.begin(), masked.end(), MaskedPosition{pos, MaskAction::Zero, 0},
                            [](const MaskedPosition& a, const MaskedPosition& b) { return a.position < b.position; });
}

std::size_t masked_count(std::size_t length, double select_ratio) {
  if (length == 0) return 0;
  const auto k = static_cast<std::size_t>(std::floor(select_ratio * static_cast<double>(length)));
  return std::clamp<std::size_t>(k, 1, length);
}

MaskPlan sample_mask_plan(std::size_t length, const MaskPolicy& policy, Rng& rng) {
  policy.validate();
  MaskPlan plan;
  plan.length = length;
  const std::size_t k = masked_count(length, policy.select_ratio);

  // Partial Fisher-Yates: the first k slots become a uniform k-subset.
  std::vector<std::size_t> order(length);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(length - i));
    std::swap(order[i], order[j]);
  }
  std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(chosen.begin(), chosen.end());

  for (std::size_t pos : chosen) {
    MaskedPosition m;
    m.position = pos;
    const double u = rng.uniform();
    if (u < policy.p_zero) {
      m.action = MaskAction::Zero;
    } else if (u < policy.p_zero + policy.p_random) {
      m.action = MaskAction::Random;
      if (length > 1) {
        std::size_t src = static_cast<std::size_t>(rng.uniform_int(length - 1));
        if (src >= pos) ++src;
        m.source = src;
      } else {
        m.source = pos;
      }
    } else {
      m.action = MaskAction::Keep;
    }
    plan.masked.push_back(m);
  }
  return plan;
}

PredictiveTargets apply_mask(const Tensor& frames, const MaskPlan& plan) {
  if (frames.rank() != 2 || plan.length != frames.rows()) {
    throw Error("apply_mask: plan length " + std::to_string(plan.length) + " does not match frames " +
                shape_string(frames.shape()));
  }
  PredictiveTargets t{frames, frames, plan};
  for (const auto& m : plan.masked) {
    auto dst = t.masked_input.row(m.position);
    switch (m.action) {
      case MaskAction::Zero:
        std::fill(dst.begin(), dst.end(), 0.0);
        break;
      case MaskAction::Random: {
        if (m.source >= frames.rows()) throw Error("apply_mask: random source out of range");
        auto src = frames.row(m.source);
        std::copy(src.begin(), src.end(), dst.begin());
        break;
      }
      case MaskAction::Keep:
        break;
    }
  }
  return t;
}

Var mpc_loss(Var prediction, const PredictiveTargets& targets) {
  Graph& g = *prediction.graph;
  if (prediction.shape() != targets.original.shape()) {
    throw Error("mpc_loss: prediction " + shape_string(prediction.shape()) + " does not match target " +
                shape_string(targets.original.shape()));
  }
  if (targets.plan.masked.empty()) {
    spdlog::warn("mpc_loss: mask plan selected no positions; loss is 0");
    return scale(sum(prediction), 0.0);
  }
  const std::vector<std::size_t> rows = targets.plan.positions();
  Tensor wanted(Shape{rows.size(), targets.original.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto src = targets.original.row(rows[i]);
    std::copy(src.begin(), src.end(), wanted.row(i).begin());
  }
  return mean(abs(sub(select_rows(prediction, rows), g.constant(std::move(wanted)))));
}

void write_mask_plan(std::ostream& os, const MaskPlan& plan) {
  os << "# length=" << plan.length << " selected=" << plan.masked.size() << '\n';
  for (const auto& m : plan.masked) {
    os << m.position << '\t';
    switch (m.action) {
      case MaskAction::Zero:
        os << "zero\t-";
        break;
      case MaskAction::Random:
        os << "random\t" << m.source;
        break;
      case MaskAction::Keep:
        os << "keep\t-";
        break;
    }
    os << '\n';
  }
}

Var apc_loss(Var x, Var y, std::size_t shift) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || x.shape() != y.shape()) {
    throw Error("apc_loss: shapes " + shape_string(x.shape()) + " and " + shape_string(y.shape()) + " differ");
  }
  const std::size_t t = xv.rows();
  if (shift < 1 || shift >= t) {
    throw Error("apc_loss: shift " + std::to_string(shift) + " must satisfy 1 <= n < T = " + std::to_string(t));
  }
  return sum(abs(sub(slice_rows(x, shift, t), slice_rows(y, 0, t - shift))));
}

Var cpc_infonce_loss(Var logits, std::size_t positive) {
  const Tensor& v = logits.value();
  const std::size_t n = v.size();
  if (n < 2) throw Error("cpc_infonce_loss: need at least 2 candidates, got " + std::to_string(n));
  if (positive >= n) throw Error("cpc_infonce_loss: positive index out of range");
  return cpc_infonce_loss(reshape(logits, Shape{1, n}), std::vector<std::size_t>{positive});
}

Var cpc_infonce_loss(Var logits, const std::vector<std::size_t>& positives) {
  const Tensor& v = logits.value();
  if (v.rank() != 2) throw Error("cpc_infonce_loss: expected an M x N score matrix");
  if (v.cols() < 2) throw Error("cpc_infonce_loss: need at least 2 candidates, got " + std::to_string(v.cols()));
  if (positives.size() != v.rows()) throw Error("cpc_infonce_loss: one positive index per row required");
  for (std::size_t p : positives) {
    if (p >= v.cols()) throw Error("cpc_infonce_loss: positive index out of range");
  }
  return scale(mean(pick(log_softmax(logits), positives)), -1.0);
}

std::vector<ContrastiveSample> sample_contrastive(std::size_t length, std::size_t max_offset,
                                                  std::size_t num_candidates, Rng& rng) {
  if (num_candidates < 2) throw Error("sample_contrastive: need N >= 2");
  std::vector<ContrastiveSample> out;
  if (length < 2) return out;
  for (std::size_t k = 1; k <= max_offset; ++k) {
    for (std::size_t t = 0; t + k < length; ++t) {
      ContrastiveSample s;
      s.anchor = t;
      s.offset = k;
      const std::size_t target = t + k;
      s.positive = static_cast<std::size_t>(rng.uniform_int(num_candidates));
      s.candidates.resize(num_candidates);
      for (std::size_t j = 0; j < num_candidates; ++j) {
        if (j == s.positive) {
          s.candidates[j] = target;
          continue;
        }
        std::size_t neg = static_cast<std::size_t>(rng.uniform_int(length - 1));
        if (neg >= target) ++neg;
        s.candidates[j] = neg;
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

Var cpc_scores(Var context, Var latents, std::span<const Var> projections,
               const std::vector<ContrastiveSample>& samples) {
  if (samples.empty()) throw Error("cpc_scores: no samples");
  if (context.value().rows() != latents.value().rows()) throw Error("cpc_scores: context and latents differ in length");
  std::vector<Var> blocks;
  std::size_t begin = 0;
  while (begin < samples.size()) {
    const std::size_t k = samples[begin].offset;
    if (k == 0 || k > projections.size()) throw Error("cpc_scores: no projection for offset " + std::to_string(k));
    std::size_t end = begin;
    std::vector<std::size_t> anchors;
    std::vector<std::vector<std::size_t>> cols;
    while (end < samples.size() && samples[end].offset == k) {
      anchors.push_back(samples[end].anchor);
      cols.push_back(samples[end].candidates);
      ++end;
    }
    // scores[t][j] = (c_t W_k) . z_j for every anchor row and all positions j.
    Var predicted = matmul(select_rows(context, anchors), projections[k - 1]);
    Var all_pairs = matmul(predicted, transpose(latents));
    blocks.push_back(gather_cols(all_pairs, cols));
    begin = end;
  }
  return blocks.size() == 1 ? blocks.front() : concat_rows(blocks);
}

}  // namespace mpc
