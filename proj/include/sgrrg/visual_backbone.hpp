#pragma once

// Toy visual feature extractor (linear patch embedder), the vision encoder
// over flattened patch tokens, and the global / region pooling used by the
// graph modules.

#include <torch/torch.h>

#include <span>
#include <vector>

#include "sgrrg/attention.hpp"
#include "sgrrg/config.hpp"
#include "sgrrg/scene_graph.hpp"

namespace sgrrg {

/// Patch-level features, [B, H, W, C]. Flattening is row-major.
struct PatchFeatures {
  torch::Tensor grid;

  int64_t batch() const { return grid.size(0); }
  int64_t height() const { return grid.size(1); }
  int64_t width() const { return grid.size(2); }
  int64_t channels() const { return grid.size(3); }

  /// [B, H*W, C]
  torch::Tensor flatten() const;
  static PatchFeatures unflatten(const torch::Tensor& tokens, int64_t height, int64_t width);
  /// Sample `b` as a batch of one.
  PatchFeatures sample(int64_t b) const;
};

/// [B, N, D]
struct EncodedVisualTokens {
  torch::Tensor tokens;
};

class VisualBackboneImpl : public torch::nn::Module {
 public:
  explicit VisualBackboneImpl(const TrainingConfig& cfg);

  /// images: [B, H_img, W_img, channels]. Throws ShapeMismatch when the image
  /// does not tile into patches or the channel count differs from the config.
  PatchFeatures extract_patch_features(const torch::Tensor& images);
  EncodedVisualTokens encode_visual(const PatchFeatures& v);

  void set_positional(bool enabled) { use_positional_ = enabled; }

  torch::nn::Linear patch_embed{nullptr};
  torch::nn::Linear mapping{nullptr};
  torch::Tensor pos_embedding;
  nn::EncoderStack encoder{nullptr};

 private:
  int64_t patch_;
  int64_t channels_;
  bool use_positional_;
};
TORCH_MODULE(VisualBackbone);

/// Mean over all H*W cells: [B, C].
torch::Tensor global_pool(const PatchFeatures& v);

/// Cell indices (r * W + c) whose centers fall inside `box`; the single
/// nearest cell when none does. Throws DegenerateBox on zero area.
std::vector<int64_t> roi_cells(const BBox& box, int64_t height, int64_t width);

struct RoiRef {
  int64_t batch = 0;
  BBox box;
};

/// Mean of the covered cells per box: [N, C]. Differentiable in `v`.
torch::Tensor roi_pool(const PatchFeatures& v, std::span<const RoiRef> rois);
/// Single-sample convenience (uses batch entry 0).
torch::Tensor roi_pool(const PatchFeatures& v, std::span<const BBox> boxes);

}  // namespace sgrrg
