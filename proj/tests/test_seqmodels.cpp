#include <gtest/gtest.h>

#include <cmath>

#include "form2seq/gradcheck.hpp"
#include "form2seq/seqmodels.hpp"
#include "form2seq/synthgen.hpp"

using namespace form2seq;

namespace {

struct Variant {
  Task task;
  const char* tag;
};

const Variant kAllVariants[] = {{Task::Type, "A_T"},    {Task::Type, "B_T"},    {Task::Type, "C_T"},
                                {Task::GroupIsolated, "A_G"}, {Task::Cascade, "B_G"}, {Task::Cascade, "C_G"},
                                {Task::Cascade, "D_G"}, {Task::Cascade, "E_G"}, {Task::Cascade, "F_G"},
                                {Task::Table, "C_T"}};

std::string label(const Variant& v) { return std::string(task_name(v.task)) + "/" + v.tag; }

}  // namespace

TEST(ModelConfig, VariantTagsRoundTrip) {
  for (const auto& v : kAllVariants) EXPECT_EQ(make_config(v.task, v.tag).variant(), v.tag) << label(v);
  EXPECT_THROW(make_config(Task::Cascade, "A_G"), std::invalid_argument);
  EXPECT_THROW(make_config(Task::Type, "E_G"), std::invalid_argument);
  EXPECT_EQ(make_config(Task::Cascade).variant(), "E_G");
  EXPECT_EQ(make_config(Task::Type).variant(), "C_T");
}

TEST(ModelConfig, DefaultDimensions) {
  auto c = make_config(Task::Type);
  EXPECT_EQ(c.enc.buckets, 1000);
  EXPECT_EQ(c.enc.word_dim, 100);
  EXPECT_EQ(c.enc.text_hidden, 100);
  EXPECT_EQ(c.enc.max_words, 200);
  EXPECT_EQ(c.context_hidden, 500);
  EXPECT_EQ(c.decoder_hidden, 1000);
  EXPECT_EQ(c.attention_dim, 500);
}

TEST(ModelConfig, JsonRoundTripAndHash) {
  for (const auto& v : kAllVariants) {
    auto c = make_mini_config(v.task, v.tag);
    auto back = model_config_from_json(to_json(c));
    EXPECT_EQ(to_json(back), to_json(c)) << label(v);
    EXPECT_EQ(config_hash(back), config_hash(c));
  }
  auto a = make_mini_config(Task::Type), b = a;
  b.decoder_hidden += 1;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Heads, PerTask) {
  auto names = [](Task t, const char* v) {
    std::vector<std::string> out;
    for (auto& h : model_heads(make_config(t, v))) out.push_back(h.name + ":" + std::to_string(h.classes));
    return out;
  };
  EXPECT_EQ(names(Task::Type, "C_T"), (std::vector<std::string>{"type:10"}));
  EXPECT_EQ(names(Task::GroupIsolated, "A_G"), (std::vector<std::string>{"group:65"}));
  EXPECT_EQ(names(Task::Cascade, "E_G"), (std::vector<std::string>{"type:6", "group:65", "field:65"}));
  EXPECT_EQ(names(Task::Table, "C_T"), (std::vector<std::string>{"row:65", "column:65"}));
}

TEST(Forward, ShapesForEveryVariant) {
  const Form f = miniature_form();
  for (const auto& v : kAllVariants) {
    Form2SeqModel<double> m(make_mini_config(v.task, v.tag));
    const auto pf = prepare_form(f, m.config());
    auto r = m.run(pf, DecodeMode::TeacherForced);
    ASSERT_EQ(r.logits.size(), r.heads.size()) << label(v);
    for (std::size_t h = 0; h < r.heads.size(); ++h) {
      EXPECT_EQ(r.logits[h].rows(), r.heads[h].classes) << label(v);
      EXPECT_EQ(r.logits[h].cols(), 4) << label(v);
      EXPECT_EQ(r.predictions[h].size(), 4u) << label(v);
    }
    EXPECT_TRUE(std::isfinite(r.loss));
  }
}

TEST(Forward, TeacherForcedLossIsSumOfCrossEntropies) {
  const Form f = miniature_form();
  for (const auto& v : kAllVariants) {
    Form2SeqModel<double> m(make_mini_config(v.task, v.tag));
    const auto pf = prepare_form(f, m.config());
    auto r = m.run(pf, DecodeMode::TeacherForced);
    double total = 0;
    for (std::size_t h = 0; h < r.heads.size(); ++h) {
      double head = 0;
      for (int i = 0; i < 4; ++i) {
        const auto col = r.logits[h].col(i);
        const double lse = std::log((col.array() - col.maxCoeff()).exp().sum()) + col.maxCoeff();
        head += lse - col(pf.targets[h][static_cast<std::size_t>(i)]);
      }
      EXPECT_NEAR(r.head_loss[h], head, 1e-12) << label(v);
      total += head;
    }
    EXPECT_NEAR(r.loss, total, 1e-12) << label(v);
  }
}

TEST(Forward, GreedyEqualsTeacherForcingOnItsOwnPredictions) {
  const Form f = miniature_form();
  for (const auto& v : kAllVariants) {
    Form2SeqModel<double> m(make_mini_config(v.task, v.tag));
    auto pf = prepare_form(f, m.config());
    auto g = m.run(pf, DecodeMode::Greedy);
    pf.targets = g.predictions;
    auto t = m.run(pf, DecodeMode::TeacherForced);
    for (std::size_t h = 0; h < g.logits.size(); ++h)
      EXPECT_LT((g.logits[h] - t.logits[h]).cwiseAbs().maxCoeff(), 1e-12) << label(v);
  }
}

TEST(Forward, GradientsRequireTeacherForcing) {
  Form2SeqModel<double> m(make_mini_config(Task::Type));
  nn::Gradients<double> g(m.params());
  EXPECT_THROW(m.run(m.params(), prepare_form(miniature_form(), m.config()), DecodeMode::Greedy, &g),
               std::invalid_argument);
  EXPECT_THROW(m.run(PreparedForm{}, DecodeMode::Greedy), std::invalid_argument);
}

TEST(GradCheck, EveryVariant) {
  const Form f = miniature_form();
  for (const auto& v : kAllVariants) {
    auto r = check_model_gradients(make_mini_config(v.task, v.tag), f);
    EXPECT_LE(r.max_rel_error, 1e-4) << label(v) << " worst " << r.worst_param;
    EXPECT_GT(r.probes, 0u);
  }
}

TEST(Cascade, OnlyNonDifferentiableWiringIsolatesTypeStage) {
  // Changing the group targets changes type-stage gradients unless the
  // stages are joined through a hard one-hot.
  const Form f = miniature_form();
  for (const char* tag : {"B_G", "C_G", "D_G", "E_G"}) {
    auto cfg = make_mini_config(Task::Cascade, tag);
    Form2SeqModel<double> m(cfg);
    auto pf = prepare_form(f, cfg);
    auto grad_of_type_stage = [&](const PreparedForm& x) {
      nn::Gradients<double> g(m.params());
      m.run(m.params(), x, DecodeMode::TeacherForced, &g);
      std::vector<nn::Mat<double>> out;
      for (std::size_t i = 0; i < m.params().size(); ++i)
        if (m.params().name(i).rfind("td.", 0) == 0 || m.params().name(i).rfind("ce_t.", 0) == 0)
          out.push_back(g.value(i));
      return out;
    };
    auto other = pf;
    for (auto& t : other.targets[1]) t = (t + 1) % cfg.group_capacity;
    const auto a = grad_of_type_stage(pf), b = grad_of_type_stage(other);
    ASSERT_FALSE(a.empty());
    double diff = 0;
    for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, (a[i] - b[i]).cwiseAbs().maxCoeff());
    if (std::string(tag) == "C_G")
      EXPECT_EQ(diff, 0.0) << tag;
    else
      EXPECT_GT(diff, 0.0) << tag;
  }
}

TEST(Init, CalibratedLossPerHead) {
  GenParams gp;
  for (const auto& v : {Variant{Task::Type, "C_T"}, Variant{Task::Cascade, "E_G"}, Variant{Task::Table, "C_T"}}) {
    Form2SeqModel<double> m(make_desk_config(v.task, v.tag));
    const auto heads = m.heads();
    std::vector<double> sum(heads.size(), 0.0);
    std::vector<double> count(heads.size(), 0.0);
    for (std::uint64_t s = 1; s <= 5; ++s) {
      Form f;
      if (v.task == Task::Table) {
        TableParams tp;
        tp.seed = s;
        f = gen_table(tp);
      } else {
        gp.seed = s;
        f = gen_form(gp);
      }
      auto r = m.run(prepare_form(f, m.config()), DecodeMode::TeacherForced);
      for (std::size_t h = 0; h < heads.size(); ++h) {
        sum[h] += static_cast<double>(r.head_loss[h]);
        count[h] += static_cast<double>(r.logits[h].cols());
      }
    }
    for (std::size_t h = 0; h < heads.size(); ++h) {
      const double expected = std::log(static_cast<double>(heads[h].classes));
      EXPECT_NEAR(sum[h] / count[h], expected, 0.1 * expected) << label(v) << " head " << heads[h].name;
    }
  }
}

TEST(Prepare, TargetsFollowReadingOrder) {
  Form f = miniature_form();
  std::swap(f.elements[0], f.elements[3]);
  auto cfg = make_mini_config(Task::Type);
  auto pf = prepare_form(f, cfg);
  EXPECT_EQ(pf.element_ids, (std::vector<int>{0, 1, 2, 3}));
  ASSERT_EQ(pf.targets.size(), 1u);
  EXPECT_EQ(pf.targets[0][3], static_cast<int>(TypeClass::TextWidget));
}

TEST(Prepare, MissingTypesLeaveTargetsEmpty) {
  Form f = miniature_form();
  f.elements[2].gold_type.reset();
  auto pf = prepare_form(f, make_mini_config(Task::Type));
  EXPECT_TRUE(pf.targets[0].empty());
  EXPECT_THROW(Form2SeqModel<double>(make_mini_config(Task::Type)).run(pf, DecodeMode::TeacherForced),
               std::invalid_argument);
}

TEST(Prepare, CapacityOverflowThrows) {
  Form f;
  for (int i = 0; i < 20; ++i) {
    Element e;
    e.id = i;
    e.bbox = {10, 10.0 + 20 * i, 50, 12};
    e.words = {"x"};
    f.elements.push_back(e);
    f.gold_groups.push_back({GroupKind::ChoiceGroup, {i}});
  }
  EXPECT_THROW(prepare_form(f, make_mini_config(Task::GroupIsolated)), CapacityError);
}

TEST(TablePostprocess, MajorityAndTies) {
  // Three vertically overlapping cells in one column, one stray.
  std::vector<BBox> boxes = {{10, 0, 50, 10}, {12, 20, 50, 10}, {15, 40, 50, 10}, {200, 0, 50, 10}};
  std::vector<int> ids = {1, 2, 1, 3};
  EXPECT_EQ(table_postprocess(boxes, ids, Axis::Horizontal), (std::vector<int>{1, 1, 1, 3}));
  std::vector<int> tie = {2, 1, 3, 3};
  std::vector<BBox> two = {boxes[0], boxes[1], boxes[3], boxes[3]};
  EXPECT_EQ(table_postprocess(two, tie, Axis::Horizontal), (std::vector<int>{1, 1, 3, 3}));
  EXPECT_THROW(table_postprocess(boxes, std::vector<int>{1}, Axis::Vertical), std::invalid_argument);
}

TEST(TablePostprocess, IdempotentOnRandomInputs) {
  nn::Rng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.index(15);
    std::vector<BBox> boxes;
    std::vector<int> ids;
    for (std::size_t i = 0; i < n; ++i) {
      boxes.push_back({rng.uniform(0, 500), rng.uniform(0, 500), rng.uniform(1, 80), rng.uniform(1, 30)});
      ids.push_back(rng.range(0, 5));
    }
    for (Axis a : {Axis::Horizontal, Axis::Vertical}) {
      auto once = table_postprocess(boxes, ids, a);
      EXPECT_EQ(table_postprocess(boxes, once, a), once);
    }
  }
}

TEST(Predict, ProducesTypesAndGroupsForCascade) {
  Form2SeqModel<double> m(make_mini_config(Task::Cascade));
  auto pred = predict_structures(miniature_form(), m, m.params(), "mini");
  EXPECT_EQ(pred.types.size(), 4u);
  for (const auto& g : pred.groups) {
    EXPECT_TRUE(g.kind == GroupKind::ChoiceGroup || g.kind == GroupKind::TextField || g.kind == GroupKind::ChoiceField);
    EXPECT_FALSE(g.members.empty());
  }
}
