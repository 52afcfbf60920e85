#pragma once

// Whole-model gradient checks: analytic gradients in double against a
// five-point finite difference of the same model evaluated in long double.

#include <string>

#include "form2seq/seqmodels.hpp"

namespace form2seq {

/// Four elements (two text blocks, two widgets) labeled for every task.
inline Form miniature_form() {
  Form f;
  const TypeClass types[] = {TypeClass::ChoiceGroupTitle, TypeClass::ChoiceWidget, TypeClass::ChoiceCaption,
                             TypeClass::TextWidget};
  const char* words[][2] = {{"Marital", "Status"}, {"", ""}, {"Married", "now"}, {"", ""}};
  for (int i = 0; i < 4; ++i) {
    Element e;
    e.id = i;
    e.kind = i % 2 ? ElementKind::Widget : ElementKind::TextBlock;
    e.bbox = {10.0 + (i % 2) * 60, 10.0 + (i / 2) * 20, 40, 12};
    if (e.kind == ElementKind::TextBlock) e.words = {words[i][0], words[i][1]};
    e.gold_type = types[i];
    f.elements.push_back(e);
  }
  f.gold_groups.push_back({GroupKind::ChoiceGroup, {0, 1, 2}});
  f.gold_groups.push_back({GroupKind::ChoiceField, {1, 2}});
  f.gold_groups.push_back({GroupKind::TextField, {3}});
  f.gold_groups.push_back({GroupKind::TableRow, {0, 1}});
  f.gold_groups.push_back({GroupKind::TableRow, {2, 3}});
  f.gold_groups.push_back({GroupKind::TableColumn, {0, 2}});
  f.gold_groups.push_back({GroupKind::TableColumn, {1, 3}});
  return f;
}

/// Teacher-forced loss gradient check of the model described by `cfg` on
/// `form`. With `randomize`, parameters are first redrawn from U(-1, 1) so
/// that every gradient is well above the relative-error floor.
inline nn::GradCheckResult check_model_gradients(const ModelConfig& cfg, const Form& form, std::size_t probes = 20,
                                                 std::uint64_t seed = 3, bool randomize = true) {
  Form2SeqModel<double> model(cfg);
  Form2SeqModel<long double> wide(cfg);
  nn::Rng rng(seed);
  if (randomize)
    for (std::size_t i = 0; i < model.params().size(); ++i) nn::init_uniform(model.params().value(i), rng, 1.0);
  const PreparedForm pf = prepare_form(form, cfg, true);
  nn::LossFn loss = [&](const nn::Parameters<double>& p, nn::Gradients<double>* g) -> long double {
    if (g) return model.run(p, pf, DecodeMode::TeacherForced, g).loss;
    auto& q = wide.params();
    for (std::size_t i = 0; i < p.size(); ++i) q.value(i) = p.value(i).cast<long double>();
    return wide.run(q, pf, DecodeMode::TeacherForced).loss;
  };
  return nn::grad_check(loss, model.params(), probes, rng);
}

}  // namespace form2seq
