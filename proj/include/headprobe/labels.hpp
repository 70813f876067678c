#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace headprobe {

enum class ConstructGroup { Appraisal, Emotion, BehavioralIntention, ConsumerVariable };

struct Construct {
  std::string_view name;  // lower-snake-case field name in label files
  ConstructGroup group;
};

inline constexpr std::size_t kNumConstructs = 32;

/// The probed variables: 20 appraisals, 8 emotions, 2 behavioral
/// intentions, 2 consumer variables.
const std::array<Construct, kNumConstructs>& constructs();

/// Index into constructs(), or nullopt for unknown names.
std::optional<std::size_t> construct_index(std::string_view name);

inline constexpr std::string_view kTrustworthiness = "trustworthiness";

/// 5-point score to {0,1}: scores below 3 map to 0. Throws InvalidArgument
/// for scores outside 1..5.
int binarize(int raw);

struct LabelRecord {
  std::string id;
  std::string text;
  std::array<std::uint8_t, kNumConstructs> raw{};
  std::array<std::uint8_t, kNumConstructs> binary{};
};

/// Per-sample labels for every construct. Immutable once loaded.
class LabelTable {
 public:
  LabelTable() = default;
  explicit LabelTable(std::vector<LabelRecord> records);

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const LabelRecord& operator[](std::size_t i) const { return records_[i]; }
  const std::vector<LabelRecord>& records() const { return records_; }

  /// Binary label vector for one construct, in record order.
  std::vector<int> binary_labels(std::string_view construct) const;

  /// Row index of each sample id in `ids`; throws FormatError if an id is
  /// missing.
  std::vector<std::size_t> align_to(const std::vector<std::string>& ids) const;

 private:
  std::vector<LabelRecord> records_;
};

/// One JSON object per line: `id`, `text`, and every construct field
/// holding a raw 1..5 score. Blank lines are skipped.
LabelTable read_labels(std::istream& in);
LabelTable read_labels_file(const std::string& path);
void write_labels(const LabelTable& table, std::ostream& out);

}  // namespace headprobe
