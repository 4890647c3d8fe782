#include "sgrrg/visual_backbone.hpp"

#include <limits>

#include "sgrrg/errors.hpp"

namespace sgrrg {

torch::Tensor PatchFeatures::flatten() const {
  return grid.reshape({batch(), height() * width(), channels()});
}

PatchFeatures PatchFeatures::unflatten(const torch::Tensor& tokens, int64_t height, int64_t width) {
  if (tokens.dim() != 3 || tokens.size(1) != height * width) {
    throw ShapeMismatch("token count does not match the grid size");
  }
  return {tokens.reshape({tokens.size(0), height, width, tokens.size(2)})};
}

PatchFeatures PatchFeatures::sample(int64_t b) const { return {grid.narrow(0, b, 1)}; }

VisualBackboneImpl::VisualBackboneImpl(const TrainingConfig& cfg)
    : patch_(cfg.patch_size), channels_(cfg.image_channels), use_positional_(cfg.vision_pos_emb) {
  const int64_t patch_dim = patch_ * patch_ * channels_;
  const int64_t side = cfg.image_size / cfg.patch_size;
  patch_embed = register_module("patch_embed", torch::nn::Linear(patch_dim, cfg.feature_dim));
  mapping = register_module("mapping", torch::nn::Linear(cfg.feature_dim, cfg.hidden_dim));
  pos_embedding = register_parameter("pos_embedding", torch::randn({side * side, cfg.hidden_dim}) * 0.02);
  encoder = register_module("encoder", nn::EncoderStack(cfg.vision_layers, cfg.hidden_dim, cfg.heads,
                                                        cfg.ffn_dim, cfg.dropout));
}

PatchFeatures VisualBackboneImpl::extract_patch_features(const torch::Tensor& images) {
  if (images.dim() != 4) throw ShapeMismatch("images must be [B, H, W, channels]");
  const int64_t b = images.size(0);
  const int64_t h = images.size(1);
  const int64_t w = images.size(2);
  if (images.size(3) != channels_) throw ShapeMismatch("image channel count differs from the config");
  if (h % patch_ != 0 || w % patch_ != 0) throw ShapeMismatch("image size is not a multiple of the patch size");
  const int64_t gh = h / patch_;
  const int64_t gw = w / patch_;
  auto patches = images.reshape({b, gh, patch_, gw, patch_, channels_})
                     .permute({0, 1, 3, 2, 4, 5})
                     .reshape({b, gh, gw, patch_ * patch_ * channels_});
  return {patch_embed->forward(patches)};
}

EncodedVisualTokens VisualBackboneImpl::encode_visual(const PatchFeatures& v) {
  auto x = mapping->forward(v.flatten());
  const int64_t n = x.size(1);
  if (use_positional_) {
    if (n > pos_embedding.size(0)) throw ShapeMismatch("more visual tokens than positional slots");
    x = x + pos_embedding.narrow(0, 0, n).unsqueeze(0);
  }
  return {encoder->forward(x)};
}

torch::Tensor global_pool(const PatchFeatures& v) { return v.grid.mean({1, 2}); }

std::vector<int64_t> roi_cells(const BBox& box, int64_t height, int64_t width) {
  if (!(box.area() > 0.0)) throw DegenerateBox("bounding box has zero area");
  std::vector<int64_t> cells;
  for (int64_t r = 0; r < height; ++r) {
    const double cy = (static_cast<double>(r) + 0.5) / static_cast<double>(height);
    if (cy < box.y_min || cy > box.y_max) continue;
    for (int64_t c = 0; c < width; ++c) {
      const double cx = (static_cast<double>(c) + 0.5) / static_cast<double>(width);
      if (cx >= box.x_min && cx <= box.x_max) cells.push_back(r * width + c);
    }
  }
  if (!cells.empty()) return cells;

  const double bx = 0.5 * (box.x_min + box.x_max);
  const double by = 0.5 * (box.y_min + box.y_max);
  double best = std::numeric_limits<double>::infinity();
  int64_t best_cell = 0;
  for (int64_t r = 0; r < height; ++r) {
    for (int64_t c = 0; c < width; ++c) {
      const double dx = (static_cast<double>(c) + 0.5) / static_cast<double>(width) - bx;
      const double dy = (static_cast<double>(r) + 0.5) / static_cast<double>(height) - by;
      const double d = dx * dx + dy * dy;
      if (d < best) {
        best = d;
        best_cell = r * width + c;
      }
    }
  }
  return {best_cell};
}

torch::Tensor roi_pool(const PatchFeatures& v, std::span<const RoiRef> rois) {
  const int64_t h = v.height();
  const int64_t w = v.width();
  const int64_t c = v.channels();
  const auto opts = v.grid.options();
  if (rois.empty()) return torch::zeros({0, c}, opts);

  std::vector<int64_t> rows;
  std::vector<int64_t> owners;
  std::vector<double> weights;
  for (std::size_t i = 0; i < rois.size(); ++i) {
    const auto& roi = rois[i];
    if (roi.batch < 0 || roi.batch >= v.batch()) throw ShapeMismatch("RoI batch index out of range");
    const auto cells = roi_cells(roi.box, h, w);
    const double wt = 1.0 / static_cast<double>(cells.size());
    for (int64_t cell : cells) {
      rows.push_back(roi.batch * h * w + cell);
      owners.push_back(static_cast<int64_t>(i));
      weights.push_back(wt);
    }
  }
  auto flat = v.grid.reshape({v.batch() * h * w, c});
  auto idx = torch::tensor(rows, torch::kLong);
  auto own = torch::tensor(owners, torch::kLong);
  auto wts = torch::tensor(weights, torch::kDouble).to(opts.dtype()).unsqueeze(1);
  auto gathered = flat.index_select(0, idx) * wts;
  return torch::zeros({static_cast<int64_t>(rois.size()), c}, opts).index_add(0, own, gathered);
}

torch::Tensor roi_pool(const PatchFeatures& v, std::span<const BBox> boxes) {
  std::vector<RoiRef> rois;
  rois.reserve(boxes.size());
  for (const auto& b : boxes) rois.push_back({0, b});
  return roi_pool(v, rois);
}

}  // namespace sgrrg
