#include "twgtm/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace twgtm {

namespace nn = torch::nn;

torch::Tensor scaled_dot_attention(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v,
                                   int64_t heads, const std::optional<torch::Tensor>& keep,
                                   torch::Tensor* weights_out) {
  const auto b = q.size(0);
  const auto lq = q.size(1);
  const auto lk = k.size(1);
  const auto dim = q.size(2);
  if (dim % heads != 0) throw std::invalid_argument("attention width not divisible by head count");
  const auto dh = dim / heads;
  auto qh = q.reshape({b, lq, heads, dh}).transpose(1, 2);
  auto kh = k.reshape({b, lk, heads, dh}).transpose(1, 2);
  auto vh = v.reshape({b, lk, heads, dh}).transpose(1, 2);
  auto logits = torch::matmul(qh, kh.transpose(-1, -2)) / std::sqrt(static_cast<double>(dh));
  if (keep) {
    auto allowed = keep->to(torch::kBool).unsqueeze(1);  // B x 1 x Lq x Lk
    logits = logits.masked_fill(allowed.logical_not(), -std::numeric_limits<double>::infinity());
  }
  auto weights = torch::softmax(logits, -1);
  if (weights_out) *weights_out = weights;
  return torch::matmul(weights, vh).transpose(1, 2).reshape({b, lq, dim});
}

torch::Tensor binarize_attention_mask(const torch::Tensor& soft_mask, double threshold) {
  auto keep = soft_mask.detach() >= threshold;
  auto empty_rows = keep.any(-1, /*keepdim=*/true).logical_not();
  return keep.logical_or(empty_rows);
}

MultiHeadAttentionImpl::MultiHeadAttentionImpl(int64_t query_dim, int64_t context_dim, int64_t heads_)
    : heads(heads_) {
  if (query_dim % heads_ != 0) throw std::invalid_argument("query width not divisible by head count");
  to_q = register_module("to_q", nn::Linear(nn::LinearOptions(query_dim, query_dim).bias(false)));
  to_k = register_module("to_k", nn::Linear(nn::LinearOptions(context_dim, query_dim).bias(false)));
  to_v = register_module("to_v", nn::Linear(nn::LinearOptions(context_dim, query_dim).bias(false)));
  to_out = register_module("to_out", nn::Linear(query_dim, query_dim));
}

torch::Tensor MultiHeadAttentionImpl::forward(const torch::Tensor& x, const torch::Tensor& context,
                                              const std::optional<torch::Tensor>& keep, torch::Tensor* weights_out) {
  return to_out(scaled_dot_attention(to_q(x), to_k(context), to_v(context), heads, keep, weights_out));
}

torch::Tensor masked_attention(MultiHeadAttention& attention, const torch::Tensor& queries,
                               const torch::Tensor& keys_values, const torch::Tensor& soft_mask,
                               torch::Tensor* weights_out) {
  if (torch::isnan(queries).any().item<bool>() || torch::isnan(keys_values).any().item<bool>() ||
      torch::isnan(soft_mask).any().item<bool>()) {
    throw std::invalid_argument("masked_attention: NaN in inputs");
  }
  const auto b = queries.size(0);
  const auto lq = queries.size(1);
  const auto lk = keys_values.size(1);
  auto mask = soft_mask;
  if (mask.dim() != 3 || mask.size(1) != lq || mask.size(2) != lk) {
    throw std::invalid_argument("masked_attention: mask must be B x " + std::to_string(lq) + " x " +
                                std::to_string(lk));
  }
  mask = mask.expand({b, lq, lk});
  return attention->forward(queries, keys_values, binarize_attention_mask(mask), weights_out);
}

FeedForwardImpl::FeedForwardImpl(int64_t dim, int64_t mult) {
  fc1 = register_module("fc1", nn::Linear(dim, dim * mult));
  fc2 = register_module("fc2", nn::Linear(dim * mult, dim));
}

torch::Tensor FeedForwardImpl::forward(const torch::Tensor& x) { return fc2(torch::gelu(fc1(x))); }

MlpImpl::MlpImpl(int64_t in_dim, int64_t out_dim) {
  fc1 = register_module("fc1", nn::Linear(in_dim, out_dim));
  fc2 = register_module("fc2", nn::Linear(out_dim, out_dim));
}

torch::Tensor MlpImpl::forward(const torch::Tensor& x) { return fc2(torch::gelu(fc1(x))); }

DecoderBlockImpl::DecoderBlockImpl(int64_t dim, int64_t context_dim, int64_t heads) {
  norm1 = register_module("norm1", nn::LayerNorm(nn::LayerNormOptions({dim})));
  norm2 = register_module("norm2", nn::LayerNorm(nn::LayerNormOptions({dim})));
  norm3 = register_module("norm3", nn::LayerNorm(nn::LayerNormOptions({dim})));
  self_attn = register_module("self_attn", MultiHeadAttention(dim, dim, heads));
  cross_attn = register_module("cross_attn", MultiHeadAttention(dim, context_dim, heads));
  ff = register_module("ff", FeedForward(dim));
}

torch::Tensor DecoderBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& context,
                                        const std::optional<torch::Tensor>& soft_mask) {
  auto h = norm1(x);
  auto out = x + self_attn(h, h);
  h = norm2(out);
  out = out + (soft_mask ? masked_attention(cross_attn, h, context, *soft_mask) : cross_attn(h, context));
  return out + ff(norm3(out));
}

torch::Tensor to_tokens(const torch::Tensor& feature_map) { return feature_map.flatten(2).transpose(1, 2); }

torch::Tensor from_tokens(const torch::Tensor& tokens, int64_t height, int64_t width) {
  return tokens.transpose(1, 2).reshape({tokens.size(0), tokens.size(2), height, width});
}

}  // namespace twgtm
