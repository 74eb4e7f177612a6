#include "branchsim/label.hpp"

#include <algorithm>
#include <stdexcept>

namespace branchsim {

Label Label::child(std::uint32_t k) const {
    std::vector<std::uint32_t> d = digits_;
    d.push_back(k);
    return Label{std::move(d)};
}

Label Label::concat(const Label& tail) const {
    std::vector<std::uint32_t> d = digits_;
    d.insert(d.end(), tail.digits_.begin(), tail.digits_.end());
    return Label{std::move(d)};
}

bool Label::is_ancestor_of(const Label& other) const {
    if (digits_.size() > other.digits_.size()) return false;
    return std::equal(digits_.begin(), digits_.end(), other.digits_.begin());
}

bool Label::is_strict_ancestor_of(const Label& other) const {
    return digits_.size() < other.digits_.size() && is_ancestor_of(other);
}

Label Label::suffix_from(std::size_t n) const {
    if (n > digits_.size()) throw std::invalid_argument("suffix_from: offset past end of label");
    return Label{std::vector<std::uint32_t>(digits_.begin() + static_cast<std::ptrdiff_t>(n),
                                            digits_.end())};
}

std::int64_t Label::distance(const Label& a, const Label& b) {
    std::size_t p = 0;
    std::size_t lim = std::min(a.digits_.size(), b.digits_.size());
    while (p < lim && a.digits_[p] == b.digits_[p]) ++p;
    std::int64_t d = 0;
    for (std::size_t l = p; l < a.digits_.size(); ++l) d += a.digits_[l] + 1;
    for (std::size_t l = p; l < b.digits_.size(); ++l) d += b.digits_[l] + 1;
    return d;
}

std::int64_t Label::norm() const { return distance(*this, Label::root()); }

int Label::cmp(const Label& a, const Label& b) {
    std::size_t lim = std::min(a.digits_.size(), b.digits_.size());
    for (std::size_t p = 0; p < lim; ++p) {
        if (a.digits_[p] != b.digits_[p]) return a.digits_[p] < b.digits_[p] ? -1 : 1;
    }
    if (a.digits_.size() == b.digits_.size()) return 0;
    return a.digits_.size() < b.digits_.size() ? -1 : 1;  // ancestor first
}

std::string Label::str() const {
    std::string s;
    for (std::size_t i = 0; i < digits_.size(); ++i) {
        if (i) s += '.';
        s += std::to_string(digits_[i]);
    }
    return s;
}

Label Label::parse(const std::string& text) {
    if (text.empty()) return Label::root();
    std::vector<std::uint32_t> d;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t dot = text.find('.', pos);
        std::string tok = text.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
        if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos)
            throw std::invalid_argument("bad label text: '" + text + "'");
        d.push_back(static_cast<std::uint32_t>(std::stoul(tok)));
        if (dot == std::string::npos) break;
        pos = dot + 1;
    }
    return Label{std::move(d)};
}

bool is_admissible(std::span<const Label> labels) {
    // In the genealogical total order the descendants of any label form a
    // contiguous block immediately after it, so duplicate/ancestor violations
    // always show up in adjacent pairs of the sorted sequence.
    std::vector<Label> s(labels.begin(), labels.end());
    std::sort(s.begin(), s.end());
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
        if (s[i].is_ancestor_of(s[i + 1])) return false;  // duplicate or strict ancestor
    }
    return true;
}

}  // namespace branchsim
