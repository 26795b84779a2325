#pragma once

#include <optional>

#include <torch/torch.h>

namespace twgtm {

/// softmax(q k^T / sqrt(d)) v over `heads` heads.
/// q: B x Lq x D, k, v: B x Lk x D. `keep` (bool, B x Lq x Lk) masks logits to
/// -inf where false. If `weights_out` is given it receives B x heads x Lq x Lk.
torch::Tensor scaled_dot_attention(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v,
                                   int64_t heads, const std::optional<torch::Tensor>& keep = std::nullopt,
                                   torch::Tensor* weights_out = nullptr);

/// Binarizes a soft attention mask at `threshold` (kept where >= threshold).
/// Rows with no kept key fall back to full attention.
torch::Tensor binarize_attention_mask(const torch::Tensor& soft_mask, double threshold = 0.5);

struct MultiHeadAttentionImpl : torch::nn::Module {
  MultiHeadAttentionImpl(int64_t query_dim, int64_t context_dim, int64_t heads);

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& context,
                        const std::optional<torch::Tensor>& keep = std::nullopt, torch::Tensor* weights_out = nullptr);

  int64_t heads;
  torch::nn::Linear to_q{nullptr}, to_k{nullptr}, to_v{nullptr}, to_out{nullptr};
};
TORCH_MODULE(MultiHeadAttention);

/// Cross attention under a soft [0,1] mask, thresholded at 0.5 with the
/// empty-row safeguard. Rejects NaN inputs.
torch::Tensor masked_attention(MultiHeadAttention& attention, const torch::Tensor& queries,
                               const torch::Tensor& keys_values, const torch::Tensor& soft_mask,
                               torch::Tensor* weights_out = nullptr);

struct FeedForwardImpl : torch::nn::Module {
  FeedForwardImpl(int64_t dim, int64_t mult = 4);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(FeedForward);

/// Two-layer perceptron with GELU, hidden width = output width.
struct MlpImpl : torch::nn::Module {
  MlpImpl(int64_t in_dim, int64_t out_dim);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(Mlp);

/// Pre-norm block: self-attention, (optionally masked) cross-attention, feed-forward.
struct DecoderBlockImpl : torch::nn::Module {
  DecoderBlockImpl(int64_t dim, int64_t context_dim, int64_t heads);

  /// `soft_mask`, when present, is B x Lq x Lk in [0,1].
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& context,
                        const std::optional<torch::Tensor>& soft_mask = std::nullopt);

  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr}, norm3{nullptr};
  MultiHeadAttention self_attn{nullptr}, cross_attn{nullptr};
  FeedForward ff{nullptr};
};
TORCH_MODULE(DecoderBlock);

/// Flattens B x C x H x W into B x (H*W) x C tokens and back.
torch::Tensor to_tokens(const torch::Tensor& feature_map);
torch::Tensor from_tokens(const torch::Tensor& tokens, int64_t height, int64_t width);

}  // namespace twgtm
