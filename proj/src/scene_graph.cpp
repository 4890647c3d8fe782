#include "sgrrg/scene_graph.hpp"

#include <algorithm>
#include <map>
#include <regex>

#include "sgrrg/errors.hpp"

namespace sgrrg {

const std::array<std::string_view, kNumAnatomicalCategories> kAnatomyNames = {
    "right lung",          "right upper lung zone", "right mid lung zone",
    "right lower lung zone", "right hilar structures", "right apical zone",
    "right costophrenic angle", "right hemidiaphragm", "left lung",
    "left upper lung zone", "left mid lung zone",   "left lower lung zone",
    "left hilar structures", "left apical zone",    "left costophrenic angle",
    "left hemidiaphragm",  "trachea",               "right clavicle",
    "left clavicle",       "aortic arch",           "upper mediastinum",
    "svc",                 "cardiac silhouette",    "cavoatrial junction",
    "right atrium",        "carina",                "abdomen",
    "spine",               "mediastinum",
};

namespace {

constexpr std::array<std::pair<AttributeType, std::string_view>, 7> kTypeNames = {{
    {AttributeType::kAnatomicalFinding, "anatomicalfinding"},
    {AttributeType::kDisease, "disease"},
    {AttributeType::kNlp, "nlp"},
    {AttributeType::kTechnicalAssessment, "technicalassessment"},
    {AttributeType::kTubesAndLines, "tubesandlines"},
    {AttributeType::kDevices, "devices"},
    {AttributeType::kTexture, "texture"},
}};

const std::regex& finding_template() {
  static const std::regex re(R"(^\|(yes|no)\|([^|]+)\|$)");
  return re;
}

const std::regex& nlp_template() {
  static const std::regex re(R"(^\|(yes|no)\|(normal|abnormal)\|$)");
  return re;
}

}  // namespace

double BBox::area() const {
  return std::max(0.0, x_max - x_min) * std::max(0.0, y_max - y_min);
}

std::string_view attribute_type_name(AttributeType type) {
  for (const auto& [t, name] : kTypeNames) {
    if (t == type) return name;
  }
  return "unknown";
}

std::optional<AttributeType> attribute_type_from_name(std::string_view name) {
  for (const auto& [t, n] : kTypeNames) {
    if (n == name) return t;
  }
  return std::nullopt;
}

std::string AttributeNode::qualified() const {
  return std::string(attribute_type_name(type)) + raw_string;
}

AttributeNode AttributeNode::from_qualified(std::string_view text, int owner) {
  const auto bar = text.find('|');
  if (bar == std::string_view::npos || bar == 0) {
    throw MalformedAttribute(std::string(text));
  }
  const auto type = attribute_type_from_name(text.substr(0, bar));
  if (!type) throw MalformedAttribute(std::string(text));
  AttributeNode node;
  node.type = *type;
  node.raw_string = std::string(text.substr(bar));
  node.owner = owner;
  return node;
}

void SceneGraph::validate() const {
  if (objects.empty()) throw EmptyGraph();
  std::vector<bool> seen(kNumAnatomicalCategories, false);
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const auto& o = objects[i];
    if (o.category_id < 0 || o.category_id >= kNumAnatomicalCategories) {
      throw UnknownCategory(o.category_id);
    }
    if (!o.bbox.well_formed()) {
      throw Error("object " + std::to_string(i) + " has a malformed bounding box");
    }
    if (seen[static_cast<std::size_t>(o.category_id)]) {
      throw Error("duplicate instance for category " + std::to_string(o.category_id));
    }
    seen[static_cast<std::size_t>(o.category_id)] = true;
    if (o.instance_index != static_cast<int>(i)) {
      throw Error("instance_index does not match object position");
    }
  }
  for (const auto& a : attributes) {
    if (a.owner < 0 || a.owner >= static_cast<int>(objects.size())) {
      throw Error("attribute '" + a.raw_string + "' references a missing object");
    }
  }
}

SceneGraph dedupe_instances(const SceneGraph& graph) {
  std::map<int, int> best;  // category -> index into graph.objects
  for (int i = 0; i < static_cast<int>(graph.objects.size()); ++i) {
    const auto& o = graph.objects[static_cast<std::size_t>(i)];
    auto it = best.find(o.category_id);
    if (it == best.end()) {
      best.emplace(o.category_id, i);
      continue;
    }
    const auto& cur = graph.objects[static_cast<std::size_t>(it->second)];
    if (o.score > cur.score || (o.score == cur.score && o.bbox.area() < cur.bbox.area())) {
      it->second = i;
    }
  }
  SceneGraph out;
  out.image_id = graph.image_id;
  std::map<int, int> remap;  // old instance index -> new
  for (const auto& [category, old_index] : best) {
    ObjectNode o = graph.objects[static_cast<std::size_t>(old_index)];
    o.instance_index = static_cast<int>(out.objects.size());
    remap.emplace(graph.objects[static_cast<std::size_t>(old_index)].instance_index, o.instance_index);
    out.objects.push_back(o);
  }
  for (const auto& a : graph.attributes) {
    auto it = remap.find(a.owner);
    if (it == remap.end()) continue;  // owner was a dropped duplicate
    AttributeNode copy = a;
    copy.owner = it->second;
    out.attributes.push_back(std::move(copy));
  }
  return out;
}

AdjacencyMask::AdjacencyMask(int size, std::vector<TokenRef> order)
    : size_(size), bits_(static_cast<std::size_t>(size * size), 0), order_(std::move(order)) {}

void AdjacencyMask::set(int i, int j, bool value) {
  bits_[static_cast<std::size_t>(i * size_ + j)] = value ? 1 : 0;
}

namespace {

// Attribute indices grouped per owner, preserving their relative order.
std::vector<std::vector<int>> attributes_by_owner(const SceneGraph& graph) {
  std::vector<std::vector<int>> groups(graph.objects.size());
  for (int j = 0; j < static_cast<int>(graph.attributes.size()); ++j) {
    const int owner = graph.attributes[static_cast<std::size_t>(j)].owner;
    if (owner < 0 || owner >= static_cast<int>(graph.objects.size())) {
      throw Error("attribute references a missing object");
    }
    groups[static_cast<std::size_t>(owner)].push_back(j);
  }
  return groups;
}

}  // namespace

AdjacencyMask build_adjacency_mask(const SceneGraph& graph) {
  if (graph.objects.empty()) throw EmptyGraph();
  const auto groups = attributes_by_owner(graph);
  const int n_obj = static_cast<int>(graph.objects.size());
  const int n = static_cast<int>(graph.num_nodes());

  std::vector<TokenRef> order;
  order.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n_obj; ++i) order.push_back({NodeKind::kObject, i});
  for (const auto& g : groups) {
    for (int j : g) order.push_back({NodeKind::kAttribute, j});
  }

  AdjacencyMask mask(n, std::move(order));
  for (int i = 0; i < n; ++i) mask.set(i, i, true);
  int pos = n_obj;
  for (int owner = 0; owner < n_obj; ++owner) {
    for (std::size_t k = 0; k < groups[static_cast<std::size_t>(owner)].size(); ++k, ++pos) {
      mask.set(owner, pos, true);
      mask.set(pos, owner, true);
    }
  }
  return mask;
}

std::vector<Subgraph> partition_subgraphs(const SceneGraph& graph) {
  if (graph.objects.empty()) throw EmptyGraph();
  const auto groups = attributes_by_owner(graph);
  std::vector<Subgraph> parts;
  parts.reserve(graph.objects.size());
  for (std::size_t i = 0; i < graph.objects.size(); ++i) {
    Subgraph s{graph.objects[i], {}};
    for (int j : groups[i]) s.attributes.push_back(graph.attributes[static_cast<std::size_t>(j)]);
    parts.push_back(std::move(s));
  }
  std::stable_sort(parts.begin(), parts.end(), [](const Subgraph& a, const Subgraph& b) {
    return a.object.instance_index < b.object.instance_index;
  });
  return parts;
}

std::vector<std::vector<int>> subgraph_token_groups(const SceneGraph& graph) {
  if (graph.objects.empty()) throw EmptyGraph();
  const auto groups = attributes_by_owner(graph);
  std::vector<std::vector<int>> tokens(graph.objects.size());
  int pos = static_cast<int>(graph.objects.size());
  for (std::size_t i = 0; i < groups.size(); ++i) {
    tokens[i].push_back(static_cast<int>(i));
    for (std::size_t k = 0; k < groups[i].size(); ++k) tokens[i].push_back(pos++);
  }
  return tokens;
}

int extract_abnormality_label(std::span<const AttributeNode> attrs) {
  int label = 0;
  std::smatch m;
  for (const auto& a : attrs) {
    if (a.type == AttributeType::kAnatomicalFinding) {
      if (!std::regex_match(a.raw_string, m, finding_template())) throw MalformedAttribute(a.raw_string);
      if (m[1] == "yes") label = 1;
    } else if (a.type == AttributeType::kNlp) {
      if (!std::regex_match(a.raw_string, m, nlp_template())) throw MalformedAttribute(a.raw_string);
      if (m[1] == "yes" && m[2] == "abnormal") label = 1;
    }
  }
  return label;
}

std::vector<SubgraphLabel> subgraph_labels(const SceneGraph& graph) {
  std::vector<SubgraphLabel> labels;
  for (const auto& part : partition_subgraphs(graph)) {
    labels.push_back({part.object.instance_index, extract_abnormality_label(part.attributes)});
  }
  return labels;
}

nlohmann::json graph_to_json(const SceneGraph& graph) {
  nlohmann::json objects = nlohmann::json::array();
  const auto parts = graph.objects.empty() ? std::vector<Subgraph>{} : partition_subgraphs(graph);
  for (const auto& part : parts) {
    nlohmann::json attrs = nlohmann::json::array();
    for (const auto& a : part.attributes) attrs.push_back(a.qualified());
    const auto& b = part.object.bbox;
    objects.push_back({{"category", part.object.category_id},
                       {"bbox", {b.x_min, b.y_min, b.x_max, b.y_max}},
                       {"attributes", attrs}});
  }
  return {{"image_id", graph.image_id}, {"objects", objects}};
}

SceneGraph graph_from_json(const nlohmann::json& j, std::size_t line) {
  if (!j.is_object()) throw SchemaError(line, "<root>", "expected an object");
  SceneGraph g;
  if (!j.contains("image_id") || !j["image_id"].is_string()) {
    throw SchemaError(line, "image_id", "missing or not a string");
  }
  g.image_id = j["image_id"].get<std::string>();
  if (!j.contains("objects") || !j["objects"].is_array()) {
    throw SchemaError(line, "objects", "missing or not an array");
  }
  for (const auto& o : j["objects"]) {
    if (!o.is_object()) throw SchemaError(line, "objects", "entry is not an object");
    if (!o.contains("category") || !o["category"].is_number_integer()) {
      throw SchemaError(line, "category", "missing or not an integer");
    }
    const int category = o["category"].get<int>();
    if (category < 0 || category >= kNumAnatomicalCategories) {
      throw SchemaError(line, "category", "outside [0, 29)");
    }
    if (!o.contains("bbox") || !o["bbox"].is_array() || o["bbox"].size() != 4) {
      throw SchemaError(line, "bbox", "expected 4 numbers");
    }
    for (const auto& v : o["bbox"]) {
      if (!v.is_number()) throw SchemaError(line, "bbox", "expected 4 numbers");
    }
    BBox b{o["bbox"][0].get<double>(), o["bbox"][1].get<double>(), o["bbox"][2].get<double>(),
           o["bbox"][3].get<double>()};
    if (!b.well_formed()) throw SchemaError(line, "bbox", "requires x_min < x_max and y_min < y_max");
    ObjectNode node;
    node.category_id = category;
    node.bbox = b;
    node.instance_index = static_cast<int>(g.objects.size());
    if (o.contains("score") && o["score"].is_number()) node.score = o["score"].get<double>();
    g.objects.push_back(node);
    if (o.contains("attributes")) {
      if (!o["attributes"].is_array()) throw SchemaError(line, "attributes", "not an array");
      for (const auto& a : o["attributes"]) {
        if (!a.is_string()) throw SchemaError(line, "attributes", "entry is not a string");
        try {
          g.attributes.push_back(AttributeNode::from_qualified(a.get<std::string>(), node.instance_index));
        } catch (const MalformedAttribute& e) {
          throw SchemaError(line, "attributes", e.what());
        }
      }
    }
  }
  return g;
}

}  // namespace sgrrg
