#include <algorithm>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "partonomy/errors.hpp"
#include "partonomy/genpipe.hpp"
#include "support/synthetic.hpp"

using namespace partonomy;
using namespace partonomy::genpipe;

namespace {

Ontology small_ontology() {
  return ontology_from_json(nlohmann::json::parse(R"({
    "categories": {"vehicle": ["car", "bicycle", "truck"], "animal": ["dog", "cat"]},
    "parts": {"car": ["wheel", "door", "window", "headlight"],
              "bicycle": ["wheel", "handlebar", "seat"],
              "truck": ["wheel", "door", "cargo bed"],
              "dog": ["head", "tail", "leg"],
              "cat": ["head", "tail", "whisker"]}})"));
}

PartInstance car_instance() {
  PartInstance inst;
  inst.label = "car";
  for (const char* p : {"wheel", "door", "window", "headlight"}) {
    inst.parts[p] = maskio::MaskRle{2, 2, {0, 1, 3}};
  }
  return inst;
}

CooccurrenceModel flat_model(const PartSet& vocab) {
  std::vector<std::string> v(vocab.begin(), vocab.end());
  return CooccurrenceModel(v, std::vector<std::vector<double>>(v.size(), std::vector<double>(v.size() + 1, 0.0)));
}

// Every set reachable from `gt` with exactly one add/remove/replace over `pool`.
std::set<PartSet> one_step_neighbours(const PartSet& gt, const PartSet& pool) {
  std::set<PartSet> out;
  for (const auto& p : pool) {
    if (!gt.count(p)) {
      auto s = gt;
      s.insert(p);
      out.insert(s);
    }
  }
  for (const auto& r : gt) {
    if (gt.size() > 1) {
      auto s = gt;
      s.erase(r);
      out.insert(s);
    }
    for (const auto& p : pool) {
      if (!gt.count(p)) {
        auto s = gt;
        s.erase(r);
        s.insert(p);
        out.insert(s);
      }
    }
  }
  return out;
}

}  // namespace

TEST(QuestionTypes, NamesRoundTrip) {
  for (auto t : kAllQuestionTypes) {
    EXPECT_EQ(parse_question_type(to_string(t)), t);
    EXPECT_EQ(parse_question_type(short_name(t)), t);
  }
  EXPECT_FALSE(parse_question_type("bogus").has_value());
  EXPECT_TRUE(needs_comparator(QuestionType::difference));
  EXPECT_FALSE(needs_comparator(QuestionType::identification));
  EXPECT_TRUE(is_part_whole(QuestionType::whole_to_part));
}

TEST(GroundTruth, SetSemanticsPerType) {
  const auto o = small_ontology();
  const auto inst = car_instance();
  const PartSet all{"door", "headlight", "wheel", "window"};
  EXPECT_EQ(build_ground_truth(inst, QuestionType::identification, std::nullopt, o).parts, all);
  EXPECT_EQ(build_ground_truth(inst, QuestionType::intersection, "truck", o).parts,
            (PartSet{"door", "wheel"}));
  EXPECT_EQ(build_ground_truth(inst, QuestionType::difference, "truck", o).parts,
            (PartSet{"headlight", "window"}));
  const auto pw = build_ground_truth(inst, QuestionType::part_to_whole, std::nullopt, o);
  EXPECT_EQ(pw.parts, all);
  EXPECT_EQ(pw.object, "car");
}

TEST(GroundTruth, EmptyResultThrows) {
  const auto o = small_ontology();
  PartInstance inst;
  inst.label = "dog";
  inst.parts["head"] = maskio::MaskRle{1, 1, {0, 1}};
  EXPECT_THROW(build_ground_truth(inst, QuestionType::difference, "cat", o), EmptyGroundTruth);
  EXPECT_THROW(build_ground_truth(inst, QuestionType::intersection, "car", o), EmptyGroundTruth);
  EXPECT_THROW(build_ground_truth(PartInstance{"dog", std::nullopt, {}}, QuestionType::identification,
                                  std::nullopt, o),
               EmptyGroundTruth);
}

TEST(Comparator, PrefersSameCategoryAndSharesAPart) {
  const auto o = small_ontology();
  const auto inst = car_instance();
  std::set<std::string> seen;
  for (std::uint64_t s = 0; s < 50; ++s) {
    Rng rng(s);
    seen.insert(sample_comparator(inst, o, rng));
  }
  EXPECT_EQ(seen, (std::set<std::string>{"bicycle", "truck"}));

  PartInstance lonely;
  lonely.label = "car";
  lonely.parts["headlight"] = maskio::MaskRle{1, 1, {0, 1}};
  Rng rng(1);
  EXPECT_THROW(sample_comparator(lonely, o, rng), NoComparator);
}

TEST(Mutation, ApplyChecksLegality) {
  const PartSet s{"a", "b"};
  EXPECT_EQ(apply_mutation(s, {MutationKind::add, "", "c"}), (PartSet{"a", "b", "c"}));
  EXPECT_EQ(apply_mutation(s, {MutationKind::remove, "a", ""}), (PartSet{"b"}));
  EXPECT_EQ(apply_mutation(s, {MutationKind::replace, "a", "c"}), (PartSet{"b", "c"}));
  EXPECT_THROW(apply_mutation(s, {MutationKind::add, "", "a"}), Error);
  EXPECT_THROW(apply_mutation(s, {MutationKind::remove, "z", ""}), Error);
  EXPECT_THROW(apply_mutation({"a"}, {MutationKind::remove, "a", ""}), Error);
  EXPECT_THROW(apply_mutation(s, {MutationKind::replace, "a", "b"}), Error);
}

TEST(Mutation, SingleStepStaysInsideTheEnumeratedNeighbourhood) {
  const PartSet gt{"door", "wheel"};
  const PartSet pool{"door", "headlight", "wheel", "window", "seat"};
  const auto model = flat_model(pool);
  const auto expected = one_step_neighbours(gt, pool);
  std::set<PartSet> seen;
  for (std::uint64_t s = 0; s < 400; ++s) {
    Rng rng(s);
    const auto m = mutate_answer(gt, model, pool, rng, 1);
    EXPECT_TRUE(expected.count(m)) << "unexpected mutation";
    seen.insert(m);
  }
  EXPECT_EQ(seen, expected);
}

TEST(Mutation, NeverReturnsGroundTruthOrEmpty) {
  const auto model = flat_model({"a", "b", "c", "d"});
  for (int n_mut = 1; n_mut <= 3; ++n_mut) {
    for (std::uint64_t s = 0; s < 200; ++s) {
      Rng rng(s);
      const auto m = mutate_answer({"a", "b"}, model, {"a", "b", "c", "d"}, rng, n_mut);
      EXPECT_NE(m, (PartSet{"a", "b"}));
      EXPECT_FALSE(m.empty());
    }
  }
}

TEST(Mutation, ExhaustsWhenNothingCanChange) {
  // single-part answer and a pool with nothing else: no add, remove or replace applies
  const auto model = flat_model({"x", "y"});
  Rng rng(3);
  EXPECT_THROW(mutate_answer({"x"}, model, {"x"}, rng, 1), MutationExhausted);
  EXPECT_THROW(generate_distractors({"x"}, model, {"x"}, rng), MutationExhausted);
}

TEST(Mutation, TooFewDistinctDistractorsExhausts) {
  // {a} with pool {a, b}: only {b} and {a, b} are reachable
  const auto model = flat_model({"a", "b"});
  Rng rng(1);
  EXPECT_THROW(generate_distractors({"a"}, model, {"a", "b"}, rng), MutationExhausted);
}

TEST(Mutation, AdditionCandidatesFollowTheModelAndTopK) {
  CooccurrenceModel model({"a", "b", "c", "d"},
                          {{0, 0, 0, 0, 0}, {2, 0, 0, 0, 0}, {1, 0, 0, 0, 0}, {-1, 0, 0, 0, 0}});
  const auto ranked = addition_candidates({"a"}, model, {"a", "b", "c", "d", "e"}, 3);
  ASSERT_EQ(ranked.size(), 3u);
  EXPECT_EQ(ranked[0].label, "b");
  EXPECT_EQ(ranked[1].label, "c");
  EXPECT_EQ(ranked[2].label, "d");  // e is outside the vocabulary and scores 0
  const auto from_vocab = addition_candidates({"a"}, model, {}, 10);
  EXPECT_EQ(from_vocab.size(), 3u);
}

TEST(Distractors, FourDistinctAndNotGroundTruth) {
  const PartSet pool{"a", "b", "c", "d", "e", "f"};
  const auto model = flat_model(pool);
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng rng(s);
    const PartSet gt{"a", "c", "e"};
    const auto d = generate_distractors(gt, model, pool, rng);
    ASSERT_EQ(d.size(), 4u);
    std::set<PartSet> unique(d.begin(), d.end());
    EXPECT_EQ(unique.size(), 4u);
    EXPECT_FALSE(unique.count(gt));
  }
}

TEST(Rendering, OxfordCommaAndPartWholeSubject) {
  EXPECT_EQ(render_choice({"wheel"}, QuestionType::identification, "car"),
            "The car in the image has wheel.");
  EXPECT_EQ(render_choice({"wheel", "door"}, QuestionType::identification, "car"),
            "The car in the image has door and wheel.");
  EXPECT_EQ(render_choice({"wheel", "door", "seat"}, QuestionType::intersection, "car"),
            "The car in the image has door, seat, and wheel.");
  EXPECT_EQ(render_choice({"wheel", "door"}, QuestionType::part_to_whole, "car"),
            "The object in the image has door and wheel.");
  EXPECT_THROW(render_choice({}, QuestionType::identification, "car"), Error);
  EXPECT_EQ(render_prompt(QuestionType::difference, "car", "truck"),
            "What visible parts does the car in the image have that a truck does not have?");
  EXPECT_EQ(render_prompt(QuestionType::part_to_whole, "car").find("car"), std::string::npos);
}

class Generation : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    testkit::SyntheticConfig cfg;
    cfg.images = 120;
    world_ = new testkit::SyntheticWorld(testkit::make_world(cfg));
    model_ = new CooccurrenceModel(testkit::train_model(*world_));
    table_ = new EmbeddingTable(world_->embeddings);
  }
  static void TearDownTestSuite() {
    delete world_;
    delete model_;
    delete table_;
  }

  static testkit::SyntheticWorld* world_;
  static CooccurrenceModel* model_;
  static EmbeddingTable* table_;
};

testkit::SyntheticWorld* Generation::world_ = nullptr;
CooccurrenceModel* Generation::model_ = nullptr;
EmbeddingTable* Generation::table_ = nullptr;

TEST_F(Generation, QuestionsAreWellFormed) {
  GenerationConfig cfg;
  GenerationStats stats;
  const auto qs = generate_questions(world_->dataset, world_->ontology, *model_, table_, cfg, &stats);
  EXPECT_EQ(stats.images, 120u);
  EXPECT_EQ(stats.emitted, qs.size());
  EXPECT_EQ(stats.emitted + stats.skipped, 120u * 5);
  EXPECT_GT(qs.size(), 400u);
  std::map<std::string, std::set<QuestionType>> per_image;
  for (const auto& q : qs) {
    EXPECT_TRUE(per_image[q.image_id].insert(q.type).second) << "two questions of one type";
    ASSERT_EQ(q.part_choices.size(), kChoiceCount);
    ASSERT_EQ(q.part_choice_sets.size(), kChoiceCount);
    EXPECT_EQ(q.part_choice_sets[q.correct_part_index], q.gt_parts);
    std::set<std::string> texts(q.part_choices.begin(), q.part_choices.end());
    EXPECT_EQ(texts.size(), kChoiceCount);
    for (const auto& part : q.gt_parts) {
      EXPECT_TRUE(q.gt_masks.count(part));
    }
    if (is_part_whole(q.type)) {
      ASSERT_TRUE(q.correct_object_index.has_value());
      EXPECT_EQ(q.object_choices.at(*q.correct_object_index), q.object_label);
    } else {
      EXPECT_TRUE(q.object_choices.empty());
    }
    if (needs_comparator(q.type)) {
      EXPECT_FALSE(q.comparator_label.empty());
    }
  }
}

TEST_F(Generation, OutputIsSortedAndIndependentOfJobsAndOrder) {
  GenerationConfig one;
  one.jobs = 1;
  GenerationConfig many = one;
  many.jobs = 4;
  const auto a = generate_questions(world_->dataset, world_->ontology, *model_, table_, one);
  const auto b = generate_questions(world_->dataset, world_->ontology, *model_, table_, many);
  auto shuffled = world_->dataset;
  std::reverse(shuffled.images.begin(), shuffled.images.end());
  const auto c = generate_questions(shuffled, world_->ontology, *model_, table_, one);
  ASSERT_EQ(a.size(), b.size());
  ASSERT_EQ(a.size(), c.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(question_to_json(a[i]), question_to_json(b[i]));
    EXPECT_EQ(question_to_json(a[i]), question_to_json(c[i]));
    if (i > 0) {
      EXPECT_LE(std::tie(a[i - 1].image_id, a[i - 1].type), std::tie(a[i].image_id, a[i].type));
    }
  }
}

TEST_F(Generation, SeedChangesOutput) {
  GenerationConfig a;
  GenerationConfig b;
  b.seed = 43;
  const auto qa = generate_questions(world_->dataset, world_->ontology, *model_, table_, a);
  const auto qb = generate_questions(world_->dataset, world_->ontology, *model_, table_, b);
  std::size_t same = 0;
  for (std::size_t i = 0; i < std::min(qa.size(), qb.size()); ++i) {
    same += question_to_json(qa[i]) == question_to_json(qb[i]) ? 1 : 0;
  }
  EXPECT_LT(same, qa.size() / 2);
}

TEST_F(Generation, PartWholeWithoutTableIsConfigError) {
  GenerationConfig cfg;
  EXPECT_THROW(generate_questions(world_->dataset, world_->ontology, *model_, nullptr, cfg), ConfigError);
  cfg.types = {QuestionType::identification};
  EXPECT_NO_THROW(generate_questions(world_->dataset, world_->ontology, *model_, nullptr, cfg));
}

TEST_F(Generation, JsonRoundTrip) {
  GenerationConfig cfg;
  const auto qs = generate_questions(world_->dataset, world_->ontology, *model_, table_, cfg);
  for (const auto& q : qs) {
    EXPECT_EQ(question_to_json(question_from_json(question_to_json(q))), question_to_json(q));
  }
}

TEST(QuestionJson, RejectsWrongChoiceCount) {
  auto j = nlohmann::json::parse(R"({"id":"x/id","image_id":"x","height":1,"width":1,
    "question_type":"identification","object":"car","prompt":"p",
    "part_choices":["a","b"],"part_choice_sets":[["a"],["b"]],"correct_part_index":0,
    "gt_parts":["a"],"gt_masks":{"a":{"size":[1,1],"counts":[0,1]}}})");
  EXPECT_THROW(question_from_json(j), SchemaViolation);
}

TEST(GenerationSkips, ImagesWithoutAnnotatedParts) {
  const auto o = small_ontology();
  PartDataset ds;
  ds.images.push_back(ImageEntry{"empty", 2, 2, {}});
  ds.images.push_back(ImageEntry{"bare", 2, 2, {PartInstance{"car", std::nullopt, {}}}});
  GenerationConfig cfg;
  cfg.types = {QuestionType::identification};
  GenerationStats stats;
  const auto qs = generate_questions(ds, o, flat_model({"door", "wheel"}), nullptr, cfg, &stats);
  EXPECT_TRUE(qs.empty());
  EXPECT_EQ(stats.skipped, 2u);
}
