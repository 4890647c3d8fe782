#include "testing.hpp"

#include <cstdio>
#include <fstream>

#include "sgrrg/config.hpp"
#include "sgrrg/errors.hpp"
#include "sgrrg/vocab.hpp"

using namespace sgrrg;

TEST_CASE("default objective weights") {
  const TrainingConfig c;
  CHECK(c.lambda_rs == 0.25);
  CHECK(c.delta_ap == 0.1);
  CHECK(c.eta_dr == 0.25);
  CHECK(c.phi_con == 0.1);
  CHECK(c.margin == 0.4);
  CHECK(c.alpha == 0.5);
  CHECK(c.beta == 0.5);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("toy preset") {
  const auto c = TrainingConfig::toy();
  CHECK(c.hidden_dim == 128);
  CHECK(c.vision_layers == 2);
  CHECK(c.sg_layers == 2);
  CHECK(c.decoder_layers == 2);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("key-value round trip") {
  auto c = TrainingConfig::toy();
  c.pooling = Pooling::kMean;
  c.mask_mode = MaskMode::kMultiplicative;
  c.nas_norm = NasNorm::kFirst;
  c.decode_mode = DecodeMode::kGreedy;
  c.seed = 123456789012345ULL;
  c.lr = 3.3e-4;
  c.nas = false;
  CHECK(TrainingConfig::from_kv(c.to_kv()) == c);
}

TEST_CASE("key-value parsing") {
  const auto c = TrainingConfig::from_kv("# comment\nsteps = 7\n\npooling=mean  # trailing\nsg = false\n");
  CHECK(c.steps == 7);
  CHECK(c.pooling == Pooling::kMean);
  CHECK_FALSE(c.sg);
  CHECK(c.hidden_dim == TrainingConfig{}.hidden_dim);

  const auto over = TrainingConfig::from_kv("steps = 9", TrainingConfig::toy());
  CHECK(over.steps == 9);
  CHECK(over.hidden_dim == 128);

  CHECK_THROWS_AS(TrainingConfig::from_kv("nonsense = 1"), Error);
  CHECK_THROWS_AS(TrainingConfig::from_kv("steps = many"), Error);
  CHECK_THROWS_AS(TrainingConfig::from_kv("pooling = median"), Error);
  CHECK_THROWS_AS(TrainingConfig::from_kv("steps"), ParseError);
}

TEST_CASE("config file load") {
  const std::string path = "config_test.cfg";
  {
    std::ofstream out(path);
    out << "heads = 4\nbeam_width = 1\n";
  }
  const auto c = TrainingConfig::load(path, TrainingConfig::toy());
  CHECK(c.heads == 4);
  CHECK(c.beam_width == 1);
  std::remove(path.c_str());
  CHECK_THROWS_AS(TrainingConfig::load("missing.cfg"), Error);
}

TEST_CASE("validation rejects broken settings") {
  auto bad = [](auto edit) {
    auto c = TrainingConfig::toy();
    edit(c);
    return c;
  };
  CHECK_THROWS_AS(bad([](TrainingConfig& c) { c.lambda_rs = -1; }).validate(), Error);
  CHECK_THROWS_AS(bad([](TrainingConfig& c) { c.alpha = 1.0; }).validate(), Error);
  CHECK_THROWS_AS(bad([](TrainingConfig& c) { c.margin = 1.0; }).validate(), Error);
  CHECK_THROWS_AS(bad([](TrainingConfig& c) { c.gamma = c.memory_slots + 1; }).validate(), Error);
  CHECK_THROWS_AS(bad([](TrainingConfig& c) { c.heads = 3; }).validate(), Error);
  CHECK_THROWS_AS(bad([](TrainingConfig& c) { c.num_categories = 30; }).validate(), Error);
}

TEST_CASE("tokenizer") {
  CHECK(tokenize("The Heart is normal.") == std::vector<std::string>{"the", "heart", "is", "normal", "."});
  CHECK(tokenize("  a,b  ") == std::vector<std::string>{"a", ",", "b"});
  CHECK(tokenize("").empty());
  CHECK(join_tokens(tokenize("No  pneumothorax .")) == "no pneumothorax .");
}

TEST_CASE("report vocabulary") {
  const std::vector<std::string> one = {"clear"};
  const auto v = ReportVocab::build(one, 1);
  REQUIRE(v.size() == 5);
  CHECK(v.word(ReportVocab::kPad) == "<pad>");
  CHECK(v.word(ReportVocab::kBos) == "<bos>");
  CHECK(v.word(ReportVocab::kEos) == "<eos>");
  CHECK(v.word(ReportVocab::kUnk) == "<unk>");
  CHECK(v.id("clear") == 4);
  CHECK(v.id("opaque") == ReportVocab::kUnk);

  const std::vector<std::string> corpus = {"b a c", "a b", "a d", "zeta"};
  const auto v2 = ReportVocab::build(corpus, 2);
  CHECK(v2.size() == 6);
  CHECK(v2.id("a") == 4);
  CHECK(v2.id("b") == 5);
  CHECK(v2.id("c") == ReportVocab::kUnk);
  CHECK(ReportVocab::build(corpus, 2) == v2);
  CHECK(ReportVocab::from_json(v2.to_json()) == v2);

  const std::vector<int64_t> ids = {ReportVocab::kBos, 4, 5, ReportVocab::kEos, ReportVocab::kPad};
  CHECK(v2.decode(ids) == "a b");
  CHECK(v2.encode("A b") == std::vector<int64_t>{4, 5});

  CHECK_THROWS_AS(ReportVocab::build(std::vector<std::string>{}, 1), EmptyCorpus);
  CHECK_THROWS_AS(ReportVocab::build(std::vector<std::string>{"", "  "}, 1), EmptyCorpus);
}

TEST_CASE("attribute vocabulary counts per category") {
  SceneGraph g1;
  g1.objects = {{0, {0, 0, 1, 1}, 0}, {5, {0, 0, 1, 1}, 1}};
  g1.attributes = {AttributeNode::from_qualified("nlp|yes|normal|", 0),
                   AttributeNode::from_qualified("anatomicalfinding|yes|edema|", 1),
                   AttributeNode::from_qualified("nlp|yes|abnormal|", 1)};
  SceneGraph g2;
  g2.objects = {{5, {0, 0, 1, 1}, 0}};
  g2.attributes = {AttributeNode::from_qualified("nlp|yes|normal|", 0)};
  const std::vector<SceneGraph> graphs = {g1, g2};
  const auto v = AttributeVocab::build(graphs);
  CHECK(v.size() == 4);
  CHECK(v.name(AttributeVocab::kUnk) == "<unk>");
  CHECK(v.id("anatomicalfinding|yes|edema|") == 1);
  CHECK(v.id("nlp|yes|abnormal|") == 2);
  CHECK(v.id("nlp|yes|normal|") == 3);
  CHECK(v.id("texture|yes|grainy|") == AttributeVocab::kUnk);
  CHECK(v.num_category_attributes(0) == 1);
  CHECK(v.num_category_attributes(5) == 3);
  CHECK(v.num_category_attributes(7) == 0);
  CHECK(v.local_index(5, 3) == 2);
  CHECK(v.local_index(0, 1) == -1);
  CHECK_THROWS_AS(v.category_attributes(29), UnknownCategory);
  CHECK(AttributeVocab::build(graphs) == v);
  CHECK(AttributeVocab::from_json(v.to_json()) == v);

  SceneGraph g3 = g1;
  g3.attributes.push_back(AttributeNode::from_qualified("texture|yes|grainy|", 0));
  v.assign_ids(g3);
  CHECK(g3.attributes[0].attribute_id == 3);
  CHECK(g3.attributes[3].attribute_id == AttributeVocab::kUnk);
}
