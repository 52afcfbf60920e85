#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "form2seq/synthgen.hpp"

using namespace form2seq;
namespace fs = std::filesystem;

namespace {

std::size_t count_kind(const Form& f, GroupKind k) {
  std::size_t n = 0;
  for (const auto& g : f.gold_groups) n += g.kind == k ? 1 : 0;
  return n;
}

double bottom_extent(const Form& f) {
  double b = 0;
  for (const auto& e : f.elements) b = std::max(b, e.bbox.bottom());
  return b;
}

fs::path scratch(const std::string& name) {
  fs::path d = fs::path(testing::TempDir()) / ("form2seq_synth_" + name);
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST(GenForm, SameSeedSameBytes) {
  GenParams p;
  p.seed = 42;
  EXPECT_EQ(to_json(gen_form(p)).dump(), to_json(gen_form(p)).dump());
  GenParams q = p;
  q.seed = 43;
  EXPECT_NE(to_json(gen_form(p)).dump(), to_json(gen_form(q)).dump());
}

TEST(GenForm, ExactlyTwoChoiceGroups) {
  GenParams p;
  p.choice_groups = {2, 2};
  for (std::uint64_t s = 1; s <= 50; ++s) {
    p.seed = s;
    EXPECT_EQ(count_kind(gen_form(p), GroupKind::ChoiceGroup), 2u) << "seed " << s;
  }
}

TEST(GenForm, ValidAcrossManySeeds) {
  GenParams p;
  for (std::uint64_t s = 1; s <= 1000; ++s) {
    p.seed = s;
    Form f;
    ASSERT_NO_THROW(f = gen_form(p)) << "seed " << s;
    ASSERT_NO_THROW(validate(f));
    for (const auto& e : f.elements) {
      ASSERT_TRUE(e.gold_type.has_value());
      ASSERT_GE(e.bbox.x, 0);
      ASSERT_GE(e.bbox.y, 0);
      ASSERT_LE(e.bbox.right(), f.page_w);
      ASSERT_LE(e.bbox.bottom(), f.page_h);
      const bool widget_type = *e.gold_type == TypeClass::ChoiceWidget || *e.gold_type == TypeClass::TextWidget;
      ASSERT_EQ(e.kind == ElementKind::Widget, widget_type) << "seed " << s;
      if (e.kind == ElementKind::TextBlock) {
        ASSERT_FALSE(e.words.empty());
      }
    }
  }
}

TEST(GenForm, ConstructCountsRespectRanges) {
  GenParams p;
  p.text_fields = {2, 4};
  p.choice_groups = {1, 2};
  p.choice_fields = {2, 3};
  for (std::uint64_t s = 1; s <= 200; ++s) {
    p.seed = s;
    const Form f = gen_form(p);
    const auto tf = count_kind(f, GroupKind::TextField), cg = count_kind(f, GroupKind::ChoiceGroup);
    EXPECT_GE(tf, 2u);
    EXPECT_LE(tf, 4u);
    EXPECT_GE(cg, 1u);
    EXPECT_LE(cg, 2u);
    for (const auto& g : f.gold_groups) {
      if (g.kind != GroupKind::ChoiceGroup) continue;
      std::size_t fields = 0;
      for (const auto& h : f.gold_groups)
        if (h.kind == GroupKind::ChoiceField &&
            std::includes(g.members.begin(), g.members.end(), h.members.begin(), h.members.end()))
          ++fields;
      EXPECT_GE(fields, 2u) << "seed " << s;
      EXPECT_LE(fields, 3u) << "seed " << s;
    }
  }
}

TEST(GenForm, ChoiceFieldsPairWidgetWithCaption) {
  GenParams p;
  for (std::uint64_t s = 1; s <= 100; ++s) {
    p.seed = s;
    const Form f = gen_form(p);
    for (const auto& g : f.gold_groups) {
      if (g.kind != GroupKind::ChoiceField) continue;
      int widgets = 0, captions = 0;
      for (int m : g.members) {
        const auto t = *f.by_id(m).gold_type;
        widgets += t == TypeClass::ChoiceWidget;
        captions += t == TypeClass::ChoiceCaption;
      }
      EXPECT_EQ(widgets, 1) << "seed " << s;
      EXPECT_GE(captions, 1) << "seed " << s;
    }
  }
}

TEST(GenForm, DensityOnlyTightensSpacing) {
  GenParams p;
  p.columns = 1;
  for (std::uint64_t s = 1; s <= 100; ++s) {
    p.seed = s;
    p.density = 1.0;
    const Form loose = gen_form(p);
    p.density = 2.0;
    const Form tight = gen_form(p);
    ASSERT_EQ(loose.elements.size(), tight.elements.size());
    for (std::size_t i = 0; i < loose.elements.size(); ++i) EXPECT_EQ(loose.elements[i].words, tight.elements[i].words);
    EXPECT_EQ(loose.gold_groups, tight.gold_groups);
    EXPECT_LE(bottom_extent(tight), bottom_extent(loose)) << "seed " << s;
  }
}

TEST(GenForm, InfeasibleLayoutThrows) {
  GenParams p;
  p.text_fields = {200, 200};
  try {
    gen_form(p);
    FAIL();
  } catch (const LayoutError& e) {
    EXPECT_NE(std::string(e.what()).find("layout infeasible"), std::string::npos);
  }
}

TEST(GenForm, BadParametersThrow) {
  GenParams p;
  p.choice_fields = {1, 3};
  EXPECT_THROW(gen_form(p), std::invalid_argument);
  p = {};
  p.sections = {3, 2};
  EXPECT_THROW(gen_form(p), std::invalid_argument);
  p = {};
  p.density = 0;
  EXPECT_THROW(gen_form(p), std::invalid_argument);
}

TEST(GenTable, ThreeByFourGrid) {
  TableParams p;
  p.rows = {3, 3};
  p.cols = {4, 4};
  p.missing_prob = 0;
  p.multiline_prob = 0;
  const Form f = gen_table(p);
  EXPECT_EQ(f.elements.size(), 12u);
  ASSERT_EQ(count_kind(f, GroupKind::TableRow), 3u);
  ASSERT_EQ(count_kind(f, GroupKind::TableColumn), 4u);
  for (const auto& g : f.gold_groups) EXPECT_EQ(g.members.size(), g.kind == GroupKind::TableRow ? 4u : 3u);
}

TEST(GenTable, EveryCellInOneRowAndOneColumn) {
  TableParams p;
  p.missing_prob = 0.4;
  p.multiline_prob = 0.3;
  for (std::uint64_t s = 1; s <= 300; ++s) {
    p.seed = s;
    const Form f = gen_table(p);
    std::map<int, int> rows, cols;
    for (const auto& g : f.gold_groups) {
      ASSERT_FALSE(g.members.empty());
      for (int m : g.members) ++(g.kind == GroupKind::TableRow ? rows : cols)[m];
    }
    for (const auto& e : f.elements) {
      EXPECT_EQ(rows[e.id], 1) << "seed " << s;
      EXPECT_EQ(cols[e.id], 1) << "seed " << s;
    }
  }
}

TEST(GenTable, Deterministic) {
  TableParams p;
  p.seed = 9;
  EXPECT_EQ(to_json(gen_table(p)).dump(), to_json(gen_table(p)).dump());
  p.rows = {1, 3};
  EXPECT_THROW(gen_table(p), std::invalid_argument);
}

TEST(Params, JsonRoundTrip) {
  GenParams g;
  g.seed = 7;
  g.text_fields = {1, 9};
  g.density = 1.5;
  EXPECT_EQ(to_json(gen_params_from_json(to_json(g))), to_json(g));
  TableParams t;
  t.cols = {3, 5};
  t.jitter = 0.5;
  EXPECT_EQ(to_json(table_params_from_json(to_json(t))), to_json(t));
  EXPECT_THROW(gen_params_from_json(json{{"colums", 2}}), FormatError);
}

TEST(FormFile, SaveLoadRoundTrip) {
  const auto dir = scratch("roundtrip");
  fs::create_directories(dir);
  GenParams p;
  p.seed = 5;
  const Form f = gen_form(p);
  save_form(dir / "f.json", f);
  const Form back = load_form(dir / "f.json");
  EXPECT_EQ(to_json(back).dump(), to_json(f).dump());
}

TEST(Corpus, ManifestAndSplits) {
  const auto a = scratch("corpus_a"), b = scratch("corpus_b");
  GenParams p;
  p.seed = 11;
  SplitSizes sizes{3, 2, 1};
  const auto ma = gen_corpus(a, p, sizes), mb = gen_corpus(b, p, sizes);
  EXPECT_EQ(ma, mb);
  EXPECT_EQ(ma["splits"]["train"].size(), 3u);
  EXPECT_EQ(ma["splits"]["dev"].size(), 2u);
  EXPECT_EQ(ma["splits"]["test"].size(), 1u);
  auto dev = load_split(a, "dev");
  ASSERT_EQ(dev.size(), 2u);
  EXPECT_EQ(dev[0].name, "dev_00000");
  GenParams one = p;
  one.seed = ma["splits"]["dev"][0]["seed"].get<std::uint64_t>();
  EXPECT_EQ(to_json(dev[0].form).dump(), to_json(gen_form(one)).dump());
  EXPECT_THROW(load_split(a, "holdout"), FormatError);

  std::set<std::uint64_t> seeds;
  for (const auto& split : {"train", "dev", "test"})
    for (const auto& e : ma["splits"][split]) seeds.insert(e["seed"].get<std::uint64_t>());
  EXPECT_EQ(seeds.size(), 6u);
}

TEST(Corpus, TablesReplaceForms) {
  const auto dir = scratch("tables");
  TableParams t;
  const auto m = gen_corpus(dir, GenParams{}, SplitSizes{2, 1, 1}, t);
  EXPECT_EQ(m["kind"], "table");
  for (const auto& nf : load_split(dir, "train")) EXPECT_GT(count_kind(nf.form, GroupKind::TableRow), 0u);
}

TEST(DeriveSeed, DistinctAndStable) {
  EXPECT_EQ(derive_seed(1, 0), derive_seed(1, 0));
  std::set<std::uint64_t> s;
  for (std::uint64_t b = 0; b < 10; ++b)
    for (std::uint64_t i = 0; i < 100; ++i) s.insert(derive_seed(b, i));
  EXPECT_EQ(s.size(), 1000u);
}
