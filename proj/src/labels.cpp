#include "headprobe/labels.hpp"

#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include "headprobe/common.hpp"
#include "json.hpp"

namespace headprobe {

const std::array<Construct, kNumConstructs>& constructs() {
  using G = ConstructGroup;
  static const std::array<Construct, kNumConstructs> table{{
      {"accountability_circumstances", G::Appraisal},
      {"accountability_other", G::Appraisal},
      {"accountability_self", G::Appraisal},
      {"attentional_activity", G::Appraisal},
      {"certainty", G::Appraisal},
      {"control_circumstances", G::Appraisal},
      {"control_other", G::Appraisal},
      {"control_self", G::Appraisal},
      {"coping_potential", G::Appraisal},
      {"difficulty", G::Appraisal},
      {"effort", G::Appraisal},
      {"expectedness", G::Appraisal},
      {"external_normative_significance", G::Appraisal},
      {"fairness", G::Appraisal},
      {"future_expectancy", G::Appraisal},
      {"goal_conduciveness", G::Appraisal},
      {"goal_relevance", G::Appraisal},
      {"novelty", G::Appraisal},
      {"perceived_obstacle", G::Appraisal},
      {"pleasantness", G::Appraisal},
      {"anger", G::Emotion},
      {"disappointment", G::Emotion},
      {"disgust", G::Emotion},
      {"gratitude", G::Emotion},
      {"joy", G::Emotion},
      {"pride", G::Emotion},
      {"regret", G::Emotion},
      {"surprise", G::Emotion},
      {"intent_to_promote", G::BehavioralIntention},
      {"intent_to_repurchase", G::BehavioralIntention},
      {"helpfulness", G::ConsumerVariable},
      {"trustworthiness", G::ConsumerVariable},
  }};
  return table;
}

std::optional<std::size_t> construct_index(std::string_view name) {
  const auto& table = constructs();
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (table[i].name == name) return i;
  }
  return std::nullopt;
}

int binarize(int raw) {
  if (raw < 1 || raw > 5) {
    throw InvalidArgument("raw score out of range 1..5: " + std::to_string(raw));
  }
  return raw < 3 ? 0 : 1;
}

LabelTable::LabelTable(std::vector<LabelRecord> records) : records_(std::move(records)) {
  std::unordered_set<std::string> seen;
  for (const auto& r : records_) {
    if (!seen.insert(r.id).second) throw FormatError("duplicate sample id: " + r.id);
    for (std::size_t c = 0; c < kNumConstructs; ++c) {
      if (r.binary[c] != binarize(r.raw[c])) {
        throw FormatError("binary label disagrees with raw score for sample " + r.id);
      }
    }
  }
}

std::vector<int> LabelTable::binary_labels(std::string_view construct) const {
  auto idx = construct_index(construct);
  if (!idx) throw InvalidArgument("unknown construct: " + std::string(construct));
  std::vector<int> out;
  out.reserve(records_.size());
  for (const auto& r : records_) out.push_back(r.binary[*idx]);
  return out;
}

std::vector<std::size_t> LabelTable::align_to(const std::vector<std::string>& ids) const {
  std::unordered_map<std::string_view, std::size_t> pos;
  for (std::size_t i = 0; i < records_.size(); ++i) pos.emplace(records_[i].id, i);
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = pos.find(id);
    if (it == pos.end()) throw FormatError("sample id not present in label file: " + id);
    out.push_back(it->second);
  }
  return out;
}

LabelTable read_labels(std::istream& in) {
  std::vector<LabelRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("label line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!obj.is_object() || !obj.contains("id") || !obj["id"].is_string() ||
        !obj.contains("text") || !obj["text"].is_string()) {
      throw FormatError("label line " + std::to_string(line_no) + ": missing id/text");
    }
    LabelRecord rec;
    rec.id = obj["id"].get<std::string>();
    rec.text = obj["text"].get<std::string>();
    for (std::size_t c = 0; c < kNumConstructs; ++c) {
      const std::string key(constructs()[c].name);
      if (!obj.contains(key) || !obj[key].is_number_integer()) {
        throw FormatError("label line " + std::to_string(line_no) + ": missing integer field " + key);
      }
      int raw = obj[key].get<int>();
      try {
        rec.binary[c] = static_cast<std::uint8_t>(binarize(raw));
      } catch (const InvalidArgument& e) {
        throw FormatError("label line " + std::to_string(line_no) + ", field " + key + ": " + e.what());
      }
      rec.raw[c] = static_cast<std::uint8_t>(raw);
    }
    records.push_back(std::move(rec));
  }
  return LabelTable(std::move(records));
}

LabelTable read_labels_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open label file: " + path);
  return read_labels(in);
}

void write_labels(const LabelTable& table, std::ostream& out) {
  for (const auto& r : table.records()) {
    nlohmann::ordered_json obj;
    obj["id"] = r.id;
    obj["text"] = r.text;
    for (std::size_t c = 0; c < kNumConstructs; ++c) {
      obj[std::string(constructs()[c].name)] = static_cast<int>(r.raw[c]);
    }
    out << obj.dump() << '\n';
  }
}

}  // namespace headprobe
