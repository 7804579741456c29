#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dkaf/eval/metrics.hpp"
#include "world.hpp"

// Hand-counted metric fixtures shared by the unit tests and the acceptance binary.
namespace dkaf::testing {

// One turn predicting {resto_02, paris, thai} against gold {resto_02, paris, cheap, rome}:
// tp 2, fp 1, fn 2, so P = 2/3, R = 1/2 and F1 = 4/7.
inline std::vector<eval::EntityTurn> entity_f1_four_sevenths() {
  eval::EntityTurn a;
  a.prediction = "resto_02 is in paris with thai food";
  a.gold_entities = {"resto_02", "paris", "cheap", "rome"};
  return {a};
}
constexpr double kFourSevenths = 4.0 / 7.0;

// "the cat sat on the mat" against "the cat is on the mat":
// 1-grams 5/6, 2-grams 3/5, 3-grams 1/4, 4-grams 0/3; add-one on n >= 2 gives
// 4/6, 2/5, 1/4. Equal lengths, so no brevity penalty.
inline double bleu_hand_count() {
  const double p = (5.0 / 6.0) * (4.0 / 6.0) * (2.0 / 5.0) * (1.0 / 4.0);
  return 100.0 * std::pow(p, 0.25);
}
inline std::vector<std::string> bleu_predictions() { return {"the cat sat on the mat"}; }
inline std::vector<std::string> bleu_references() { return {"the cat is on the mat"}; }

// A short hypothesis: "the cat" against "the cat is on the mat". 1-grams 2/2, 2-grams
// (1+1)/(1+1), 3- and 4-grams (0+1)/(0+1); brevity penalty exp(1 - 6/2).
inline double bleu_short_hand_count() { return 100.0 * std::exp(1.0 - 3.0); }

// Dialog suggesting resto_02, resto_09 and resto_03 in that order.
inline Dialog rc_order_dialog() {
  return make_dialog("rc0",
                     {{Speaker::user, "i want thai food in paris in a cheap price range"},
                      {Speaker::agent, "api_call thai paris cheap"},
                      {Speaker::user, "<silence>"},
                      {Speaker::agent, "what do you think of this option: resto_02"},
                      {Speaker::user, "no"},
                      {Speaker::agent, "what do you think of this option: resto_09"},
                      {Speaker::user, "no"},
                      {Speaker::agent, "what do you think of this option: resto_03"},
                      {Speaker::user, "let's do it"},
                      {Speaker::agent, "great"}},
                     desk_world().ontology);
}

// Neighbours rated 8 and 4 around resto_09: a completion of `rating` is correct iff it lies in [4, 8].
inline cascade::ArbitrationTrace rc_order_trace(const std::string& rating) {
  cascade::ArbitrationTrace t;
  t.dialog_id = "rc0";
  t.result_kb.insert(restaurant("resto_02", "thai", "paris", "cheap", "8stars"));
  t.result_kb.insert(restaurant("resto_03", "thai", "paris", "cheap", "4stars"));
  t.result_kb.insert(restaurant("resto_09", "thai", "paris", "cheap", rating));
  t.completed = {{{"resto_09", "restaurant"}, "rating", {rating, "rating"}}};
  return t;
}

}  // namespace dkaf::testing
