#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace branchsim {

// Genealogical label in the Ulam-Harris tree: a finite word of offspring
// indices.  The empty word is the root ancestor; label (2,0) is "child 0 of
// child 2 of the root".  Serialized as dot-separated digits, "" for the root.
class Label {
  public:
    Label() = default;
    explicit Label(std::vector<std::uint32_t> digits) : digits_(std::move(digits)) {}

    static Label root() { return Label{}; }

    const std::vector<std::uint32_t>& digits() const { return digits_; }
    std::size_t depth() const { return digits_.size(); }
    bool is_root() const { return digits_.empty(); }

    // Label of this particle's k-th offspring.
    Label child(std::uint32_t k) const;

    // Concatenation: descendant of *this reached by the word `tail`.
    Label concat(const Label& tail) const;

    // True iff *this is an ancestor of `other` (prefix order; every label is
    // an ancestor of itself).
    bool is_ancestor_of(const Label& other) const;
    bool is_strict_ancestor_of(const Label& other) const;

    // Drops the first `n` digits (used to transplant a descendant word onto
    // another ancestor).  Requires n <= depth().
    Label suffix_from(std::size_t n) const;

    // Tree distance: sum of (digit+1) edge weights from each label up to the
    // longest common prefix.  Labels that differ already in the first digit
    // meet at the root.
    static std::int64_t distance(const Label& a, const Label& b);

    // distance(*this, root): the "size" of the label.
    std::int64_t norm() const;

    // Genealogical total order: ancestors come first; otherwise the first
    // differing offspring index decides.  Returns <0, 0, >0.
    static int cmp(const Label& a, const Label& b);

    bool operator==(const Label& o) const { return digits_ == o.digits_; }
    bool operator!=(const Label& o) const { return digits_ != o.digits_; }
    bool operator<(const Label& o) const { return cmp(*this, o) < 0; }

    std::string str() const;
    static Label parse(const std::string& text);

  private:
    std::vector<std::uint32_t> digits_;
};

// True iff no label in the set is a strict ancestor of another (labels may
// repeat only as full duplicates, which are also rejected: a configuration
// holds *distinct* coexisting individuals).
bool is_admissible(std::span<const Label> labels);

}  // namespace branchsim
