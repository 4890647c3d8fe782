#pragma once

// Radiology scene graphs: anatomical-location objects, their attributes, the
// adjacency mask used by the graph encoder, and subgraph partitions.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace sgrrg {

inline constexpr int kNumAnatomicalCategories = 29;

/// Chest ImaGenome anatomical locations, indexed by category id.
extern const std::array<std::string_view, kNumAnatomicalCategories> kAnatomyNames;

/// Normalized image coordinates in [0, 1].
struct BBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double area() const;
  bool well_formed() const { return x_min < x_max && y_min < y_max; }
  bool operator==(const BBox&) const = default;
};

enum class AttributeType : std::uint8_t {
  kAnatomicalFinding,
  kDisease,
  kNlp,
  kTechnicalAssessment,
  kTubesAndLines,
  kDevices,
  kTexture,
};

std::string_view attribute_type_name(AttributeType type);
std::optional<AttributeType> attribute_type_from_name(std::string_view name);

struct ObjectNode {
  int category_id = 0;
  BBox bbox;
  int instance_index = 0;
  double score = 1.0;  // annotation or detector confidence, used for dedupe

  bool operator==(const ObjectNode&) const = default;
};

inline constexpr int kUnassignedAttributeId = -1;

struct AttributeNode {
  int attribute_id = kUnassignedAttributeId;
  AttributeType type = AttributeType::kNlp;
  std::string raw_string;  // e.g. "|yes|pneumothorax|"
  int owner = 0;           // instance_index of the owning object

  /// "<type>|yes|pneumothorax|": the form stored in JSON and in vocabularies.
  std::string qualified() const;
  static AttributeNode from_qualified(std::string_view text, int owner);

  bool operator==(const AttributeNode&) const = default;
};

/// A candidate box from annotation or an external detector.
struct Detection {
  int category = 0;
  BBox bbox;
  double score = 1.0;
  bool operator==(const Detection&) const = default;
};

struct SceneGraph {
  std::string image_id;
  std::vector<ObjectNode> objects;
  std::vector<AttributeNode> attributes;

  bool empty() const { return objects.empty(); }
  std::size_t num_nodes() const { return objects.size() + attributes.size(); }

  /// Throws Error when an invariant is violated; EmptyGraph when there are no objects.
  void validate() const;

  bool operator==(const SceneGraph&) const = default;
};

/// Keeps one instance per category (highest score, then smallest box area),
/// reattaches attributes and renumbers instance_index in category order.
SceneGraph dedupe_instances(const SceneGraph& graph);

enum class NodeKind : std::uint8_t { kObject, kAttribute };

struct TokenRef {
  NodeKind kind = NodeKind::kObject;
  int index = 0;  // into SceneGraph::objects or SceneGraph::attributes
  bool operator==(const TokenRef&) const = default;
};

class AdjacencyMask {
 public:
  AdjacencyMask() = default;
  AdjacencyMask(int size, std::vector<TokenRef> order);

  int size() const { return size_; }
  bool at(int i, int j) const { return bits_[static_cast<std::size_t>(i * size_ + j)] != 0; }
  void set(int i, int j, bool value);
  const std::vector<TokenRef>& token_order() const { return order_; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }

 private:
  int size_ = 0;
  std::vector<std::uint8_t> bits_;
  std::vector<TokenRef> order_;
};

/// Objects first, then attributes grouped by owner in object order. Self-loops
/// on the diagonal; object<->owned-attribute edges; nothing else.
AdjacencyMask build_adjacency_mask(const SceneGraph& graph);

struct Subgraph {
  ObjectNode object;
  std::vector<AttributeNode> attributes;
};

std::vector<Subgraph> partition_subgraphs(const SceneGraph& graph);

/// Token indices (in build_adjacency_mask order) for each subgraph: the object
/// token followed by its attribute tokens.
std::vector<std::vector<int>> subgraph_token_groups(const SceneGraph& graph);

/// 1 iff some anatomical finding reads |yes|<disease>| or some NLP attribute
/// reads |yes|abnormal|. Throws MalformedAttribute on a template mismatch.
int extract_abnormality_label(std::span<const AttributeNode> attrs);

struct SubgraphLabel {
  int object_index = 0;
  int abnormal = 0;
};

std::vector<SubgraphLabel> subgraph_labels(const SceneGraph& graph);

nlohmann::json graph_to_json(const SceneGraph& graph);

/// Parses the JSON-lines scene-graph schema. `line` is only used for error reporting.
SceneGraph graph_from_json(const nlohmann::json& j, std::size_t line = 0);

}  // namespace sgrrg
