#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace cloze::textdata {

inline constexpr std::size_t kPadId = 0;
inline constexpr std::size_t kBoundaryId = 1;
inline constexpr std::size_t kSepId = 2;
inline constexpr std::size_t kUnkId = 3;
inline constexpr std::size_t kNumReserved = 4;

inline constexpr const char* kPadToken = "<pad>";
inline constexpr const char* kBoundaryToken = "<s>";
inline constexpr const char* kSepToken = "<sep>";
inline constexpr const char* kUnkToken = "<unk>";

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Token inventory. Reserved ids come first, then types by descending
/// count with ties broken by byte order of the string.
class Vocab {
 public:
  Vocab();

  /// Keeps types with count >= min_freq; max_types (0 = unlimited) caps the
  /// number of non-reserved types.
  static Vocab build(const std::map<std::string, std::uint64_t>& counts, std::uint64_t min_freq,
                     std::size_t max_types = 0);

  std::size_t size() const { return types_.size(); }
  bool contains(const std::string& type) const { return index_.contains(type); }
  /// Unknown types map to kUnkId.
  std::size_t id(const std::string& type) const;
  const std::string& str(std::size_t id) const { return types_.at(id); }
  std::uint64_t count(std::size_t id) const { return counts_.at(id); }
  const std::vector<std::string>& types() const { return types_; }

  void write(std::ostream& out) const;
  static Vocab read(std::istream& in);
  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

  bool operator==(const Vocab& other) const { return types_ == other.types_ && counts_ == other.counts_; }

 private:
  void add(std::string type, std::uint64_t count);

  std::vector<std::string> types_;
  std::vector<std::uint64_t> counts_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Splits on ASCII whitespace.
std::vector<std::string> split_whitespace(const std::string& line);

/// Splits into UTF-8 code points; malformed bytes become single units.
std::vector<std::string> utf8_units(const std::string& word);

}  // namespace cloze::textdata
