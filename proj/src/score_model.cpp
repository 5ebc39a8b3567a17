#include "glab/score_model.hpp"

#include "glab/text.hpp"

namespace glab {

std::string to_string(const Condition& cond) {
  if (std::holds_alternative<NullCondition>(cond)) return "null";
  if (const auto* c = std::get_if<ClassCondition>(&cond)) return "class:" + std::to_string(c->k);
  std::string bits;
  for (bool b : std::get<SubsetCondition>(cond).mask) bits.push_back(b ? '1' : '0');
  return "subset:" + bits;
}

// "null", "class:<k>" or "subset:<bitmask>" with one 0/1 per component.
Condition parse_condition(const std::string& text) {
  const std::string t = trim(text);
  if (t == "null") return NullCondition{};
  if (t.rfind("class:", 0) == 0) {
    return ClassCondition{static_cast<int>(parse_int(t.substr(6)))};
  }
  if (t.rfind("subset:", 0) == 0) {
    SubsetCondition subset;
    for (char c : t.substr(7)) {
      if (c != '0' && c != '1') throw ParameterError("subset mask must be a 0/1 string");
      subset.mask.push_back(c == '1');
    }
    if (subset.mask.empty()) throw ParameterError("empty subset mask");
    return subset;
  }
  throw ParameterError("condition must be 'null', 'class:<k>' or 'subset:<mask>'; got '" + t +
                       "'");
}

}  // namespace glab
