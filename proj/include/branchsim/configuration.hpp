#pragma once

#include <Eigen/Dense>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "branchsim/label.hpp"

namespace branchsim {

struct Atom {
    Label label;
    Eigen::VectorXd pos;
};

// Unordered population seen only through positions; points are kept in
// lexicographic order so that every construction of the same multiset gives
// the identical object (bit-for-bit), whatever labels or storage order the
// source had.
struct UnlabeledMeasure {
    int dim = 0;
    std::vector<Eigen::VectorXd> points;

    std::size_t size() const { return points.size(); }
    double mass() const { return static_cast<double>(points.size()); }
    double sum_norm1() const;
    double sum_sq() const;
};

class LabelPermutation;

// A finite population of labeled particles: distinct genealogical labels with
// positions in R^d, stored sorted by the genealogical total order.  The value
// is immutable after construction; updates return new configurations.
class Configuration {
  public:
    explicit Configuration(int dim) : dim_(dim) {}
    Configuration(int dim, std::vector<Atom> atoms);

    static Configuration single(int dim, const Label& label, const Eigen::VectorXd& pos);

    int dim() const { return dim_; }
    std::size_t size() const { return atoms_.size(); }
    bool empty() const { return atoms_.empty(); }
    const std::vector<Atom>& atoms() const { return atoms_; }
    const Atom& atom(std::size_t i) const { return atoms_[i]; }

    // index of the atom carrying `label`, or -1
    int find(const Label& label) const;
    bool contains(const Label& label) const { return find(label) >= 0; }

    double mass() const { return static_cast<double>(atoms_.size()); }
    double sum_norm1() const;  // sum of |x_i|_1
    double sum_sq() const;     // sum of |x_i|_2^2

    // True iff no label is a strict ancestor of another.
    bool admissible() const;

    // Branching update: particle `parent` dies and is replaced by offspring
    // parent.0 .. parent.(k-1), all at the parent's position (k = 0 is pure
    // death).  Throws if `parent` is absent.  Preserves admissibility.
    Configuration branch_update(const Label& parent, std::uint32_t k) const;

    // Applies a label bijection (extended to descendants) and re-sorts.
    Configuration relabeled(const LabelPermutation& perm) const;

    // Forgets labels; canonical (lexicographically sorted) point list.
    // Cached: configurations are immutable.
    const UnlabeledMeasure& unlabeled() const;

    // Flattens positions into one vector, coordinate block r*dim..(r+1)*dim
    // holding the r-th atom in genealogical order; returns the label order
    // alongside.
    struct Flattened {
        std::vector<Label> labels;
        Eigen::VectorXd coords;
    };
    Flattened flatten() const;

    std::string to_json() const;
    static Configuration from_json(const std::string& text);

    bool operator==(const Configuration& o) const;

  private:
    int dim_ = 0;
    std::vector<Atom> atoms_;
    mutable std::shared_ptr<const UnlabeledMeasure> pi_cache_;
};

// Bijection between two finite label sets.  Applying it to a configuration
// relabels atoms; labels outside the domain are mapped through their longest
// ancestor in the domain (descendants travel with their ancestor), and are
// left unchanged if no ancestor is in the domain.
class LabelPermutation {
  public:
    LabelPermutation() = default;
    // pairs (from, to); throws unless `from`s are distinct and `to`s are distinct
    explicit LabelPermutation(std::vector<std::pair<Label, Label>> pairs);

    // random shuffle of a label set onto itself
    static LabelPermutation shuffle_of(const std::vector<Label>& labels, std::uint64_t seed);

    LabelPermutation inverse() const;

    // exact-domain lookup; throws if absent
    Label apply(const Label& l) const;
    // domain lookup extended to descendants (see class comment)
    Label apply_extended(const Label& l) const;

    const std::vector<std::pair<Label, Label>>& pairs() const { return pairs_; }

  private:
    std::vector<std::pair<Label, Label>> pairs_;  // sorted by `from`
};

// Transport distance between labeled populations.  Ground cost between atoms
// is tree-distance between labels plus the l1 distance between positions;
// mass defect is paid at a cemetery state at unit surcharge above the cost to
// the base atom (root label at the origin).  Computed by exact minimum-cost
// matching on the padded square cost matrix.
double population_distance(const Configuration& a, const Configuration& b);

// Ground-cost helpers exposed for tests.
double atom_ground_cost(const Atom& a, const Atom& b);
double atom_cemetery_cost(const Atom& a);

// Deterministic random admissible population: replays random branching
// updates from a root particle, then draws normal positions at the given
// scale.  Pure function of the seed; used by validators and tests.
Configuration random_admissible_population(std::uint64_t seed, int dim, std::size_t max_size,
                                           double pos_scale = 2.0);

}  // namespace branchsim
