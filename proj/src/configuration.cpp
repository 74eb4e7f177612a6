#include "branchsim/configuration.hpp"

#include <algorithm>
#include <stdexcept>

#include <json.hpp>

#include "branchsim/matching.hpp"
#include "branchsim/rng.hpp"
#include "branchsim/util.hpp"

namespace branchsim {

namespace {

bool lex_less(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        if (a[i] != b[i]) return a[i] < b[i];
    }
    return false;
}

}  // namespace

double UnlabeledMeasure::sum_norm1() const {
    double s = 0.0;
    for (const auto& p : points) s += p.lpNorm<1>();
    return s;
}

double UnlabeledMeasure::sum_sq() const {
    double s = 0.0;
    for (const auto& p : points) s += p.squaredNorm();
    return s;
}

Configuration::Configuration(int dim, std::vector<Atom> atoms) : dim_(dim), atoms_(std::move(atoms)) {
    if (dim_ <= 0) throw std::invalid_argument("Configuration: dim must be positive");
    for (const auto& a : atoms_) {
        if (a.pos.size() != dim_) throw std::invalid_argument("Configuration: atom dimension mismatch");
    }
    std::sort(atoms_.begin(), atoms_.end(),
              [](const Atom& a, const Atom& b) { return Label::cmp(a.label, b.label) < 0; });
    for (std::size_t i = 0; i + 1 < atoms_.size(); ++i) {
        if (atoms_[i].label == atoms_[i + 1].label)
            throw std::invalid_argument("Configuration: duplicate label " + atoms_[i].label.str());
    }
}

Configuration Configuration::single(int dim, const Label& label, const Eigen::VectorXd& pos) {
    return Configuration(dim, {Atom{label, pos}});
}

int Configuration::find(const Label& label) const {
    auto it = std::lower_bound(atoms_.begin(), atoms_.end(), label, [](const Atom& a, const Label& l) {
        return Label::cmp(a.label, l) < 0;
    });
    if (it == atoms_.end() || !(it->label == label)) return -1;
    return static_cast<int>(it - atoms_.begin());
}

double Configuration::sum_norm1() const {
    double s = 0.0;
    for (const auto& a : atoms_) s += a.pos.lpNorm<1>();
    return s;
}

double Configuration::sum_sq() const {
    double s = 0.0;
    for (const auto& a : atoms_) s += a.pos.squaredNorm();
    return s;
}

bool Configuration::admissible() const {
    // atoms are sorted, so ancestor violations appear in adjacent pairs
    for (std::size_t i = 0; i + 1 < atoms_.size(); ++i) {
        if (atoms_[i].label.is_ancestor_of(atoms_[i + 1].label)) return false;
    }
    return true;
}

Configuration Configuration::branch_update(const Label& parent, std::uint32_t k) const {
    int idx = find(parent);
    if (idx < 0) throw std::invalid_argument("branch_update: parent " + parent.str() + " not present");
    std::vector<Atom> next;
    next.reserve(atoms_.size() + k);
    for (int i = 0; i < static_cast<int>(atoms_.size()); ++i) {
        if (i == idx) continue;
        next.push_back(atoms_[i]);
    }
    for (std::uint32_t c = 0; c < k; ++c) next.push_back(Atom{parent.child(c), atoms_[idx].pos});
    return Configuration(dim_, std::move(next));
}

Configuration Configuration::relabeled(const LabelPermutation& perm) const {
    std::vector<Atom> next;
    next.reserve(atoms_.size());
    for (const auto& a : atoms_) next.push_back(Atom{perm.apply_extended(a.label), a.pos});
    return Configuration(dim_, std::move(next));
}

const UnlabeledMeasure& Configuration::unlabeled() const {
    if (!pi_cache_) {
        auto mu = std::make_shared<UnlabeledMeasure>();
        mu->dim = dim_;
        mu->points.reserve(atoms_.size());
        for (const auto& a : atoms_) mu->points.push_back(a.pos);
        std::sort(mu->points.begin(), mu->points.end(), lex_less);
        pi_cache_ = std::move(mu);
    }
    return *pi_cache_;
}

Configuration::Flattened Configuration::flatten() const {
    Flattened f;
    f.labels.reserve(atoms_.size());
    f.coords.resize(static_cast<Eigen::Index>(atoms_.size()) * dim_);
    for (std::size_t r = 0; r < atoms_.size(); ++r) {
        f.labels.push_back(atoms_[r].label);
        f.coords.segment(static_cast<Eigen::Index>(r) * dim_, dim_) = atoms_[r].pos;
    }
    return f;
}

std::string Configuration::to_json() const {
    nlohmann::json j;
    j["dim"] = dim_;
    j["atoms"] = nlohmann::json::array();
    for (const auto& a : atoms_) {
        nlohmann::json ja;
        ja["label"] = a.label.str();
        ja["pos"] = std::vector<double>(a.pos.data(), a.pos.data() + a.pos.size());
        j["atoms"].push_back(std::move(ja));
    }
    return j.dump();
}

Configuration Configuration::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    if (!j.is_object() || !j.contains("dim") || !j.contains("atoms"))
        throw std::invalid_argument("configuration JSON needs 'dim' and 'atoms'");
    for (const auto& [key, _] : j.items()) {
        if (key != "dim" && key != "atoms")
            throw std::invalid_argument("configuration JSON: unknown key '" + key + "'");
    }
    int dim = j["dim"].get<int>();
    std::vector<Atom> atoms;
    for (const auto& ja : j["atoms"]) {
        for (const auto& [key, _] : ja.items()) {
            if (key != "label" && key != "pos")
                throw std::invalid_argument("configuration JSON: unknown atom key '" + key + "'");
        }
        Label l = Label::parse(ja.at("label").get<std::string>());
        auto pos = ja.at("pos").get<std::vector<double>>();
        atoms.push_back(Atom{l, Eigen::Map<const Eigen::VectorXd>(pos.data(), static_cast<Eigen::Index>(pos.size()))});
    }
    return Configuration(dim, std::move(atoms));
}

bool Configuration::operator==(const Configuration& o) const {
    if (dim_ != o.dim_ || atoms_.size() != o.atoms_.size()) return false;
    for (std::size_t i = 0; i < atoms_.size(); ++i) {
        if (!(atoms_[i].label == o.atoms_[i].label)) return false;
        if (atoms_[i].pos != o.atoms_[i].pos) return false;
    }
    return true;
}

LabelPermutation::LabelPermutation(std::vector<std::pair<Label, Label>> pairs) : pairs_(std::move(pairs)) {
    std::sort(pairs_.begin(), pairs_.end(),
              [](const auto& a, const auto& b) { return Label::cmp(a.first, b.first) < 0; });
    for (std::size_t i = 0; i + 1 < pairs_.size(); ++i) {
        if (pairs_[i].first == pairs_[i + 1].first)
            throw std::invalid_argument("LabelPermutation: duplicate domain label");
    }
    std::vector<Label> images;
    for (const auto& p : pairs_) images.push_back(p.second);
    std::sort(images.begin(), images.end());
    for (std::size_t i = 0; i + 1 < images.size(); ++i) {
        if (images[i] == images[i + 1]) throw std::invalid_argument("LabelPermutation: duplicate image label");
    }
}

LabelPermutation LabelPermutation::shuffle_of(const std::vector<Label>& labels, std::uint64_t seed) {
    std::vector<std::size_t> order(labels.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    // Fisher-Yates driven by the counter-based noise so shuffles are pure
    // functions of the seed
    NoiseKey key(seed, Label::root());
    for (std::size_t i = order.size(); i > 1; --i) {
        std::uint64_t r = noise_bits(key, NoiseStream::Mark, i) % i;
        std::swap(order[i - 1], order[r]);
    }
    std::vector<std::pair<Label, Label>> pairs;
    pairs.reserve(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) pairs.emplace_back(labels[i], labels[order[i]]);
    return LabelPermutation(std::move(pairs));
}

LabelPermutation LabelPermutation::inverse() const {
    std::vector<std::pair<Label, Label>> inv;
    inv.reserve(pairs_.size());
    for (const auto& p : pairs_) inv.emplace_back(p.second, p.first);
    return LabelPermutation(std::move(inv));
}

Label LabelPermutation::apply(const Label& l) const {
    auto it = std::lower_bound(pairs_.begin(), pairs_.end(), l, [](const auto& p, const Label& q) {
        return Label::cmp(p.first, q) < 0;
    });
    if (it == pairs_.end() || !(it->first == l))
        throw std::invalid_argument("LabelPermutation: label " + l.str() + " not in domain");
    return it->second;
}

Label LabelPermutation::apply_extended(const Label& l) const {
    // longest domain label that is an ancestor of l (domain labels are
    // mutually non-nested in the admissible use case, so at most one applies)
    const std::pair<Label, Label>* best = nullptr;
    for (const auto& p : pairs_) {
        if (p.first.is_ancestor_of(l) && (!best || p.first.depth() > best->first.depth())) best = &p;
    }
    if (!best) return l;
    return best->second.concat(l.suffix_from(best->first.depth()));
}

double atom_ground_cost(const Atom& a, const Atom& b) {
    return static_cast<double>(Label::distance(a.label, b.label)) + (a.pos - b.pos).lpNorm<1>();
}

double atom_cemetery_cost(const Atom& a) {
    return static_cast<double>(a.label.norm()) + a.pos.lpNorm<1>() + 1.0;
}

Configuration random_admissible_population(std::uint64_t seed, int dim, std::size_t max_size,
                                           double pos_scale) {
    NoiseKey key(seed, Label::root());
    std::uint64_t ctr = 0;
    std::vector<Label> labels = {Label::root()};
    std::uint64_t n_updates = noise_bits(key, NoiseStream::Mark, ctr++) % (2 * max_size);
    for (std::uint64_t u = 0; u < n_updates; ++u) {
        if (labels.empty()) break;
        std::uint64_t pick = noise_bits(key, NoiseStream::Mark, ctr++) % labels.size();
        std::uint32_t k = static_cast<std::uint32_t>(noise_bits(key, NoiseStream::Mark, ctr++) % 4);
        Label parent = labels[pick];
        if (labels.size() - 1 + k > max_size) continue;  // skip growth past the cap
        labels.erase(labels.begin() + static_cast<std::ptrdiff_t>(pick));
        for (std::uint32_t c = 0; c < k; ++c) labels.push_back(parent.child(c));
    }
    if (labels.empty()) labels.push_back(Label::root());
    std::vector<Atom> atoms;
    for (const auto& l : labels) {
        Eigen::VectorXd x(dim);
        NoiseKey pk(seed ^ 0x5bd1e995ull, l);
        for (int c = 0; c < dim; ++c)
            x[c] = pos_scale * noise_normal(pk, NoiseStream::Diffusion, static_cast<std::uint64_t>(c));
        atoms.push_back(Atom{l, x});
    }
    return Configuration(dim, std::move(atoms));
}

double population_distance(const Configuration& a, const Configuration& b) {
    if (a.dim() != b.dim()) throw std::invalid_argument("population_distance: dimension mismatch");
    const int na = static_cast<int>(a.size()), nb = static_cast<int>(b.size());
    const int m = std::max(na, nb);
    if (m == 0) return 0.0;
    // rows: atoms of a then cemetery padding; columns likewise for b
    std::vector<double> cost(static_cast<std::size_t>(m) * m, 0.0);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
            double c;
            if (i < na && j < nb) c = atom_ground_cost(a.atom(i), b.atom(j));
            else if (i < na) c = atom_cemetery_cost(a.atom(i));
            else if (j < nb) c = atom_cemetery_cost(b.atom(j));
            else c = 0.0;
            cost[static_cast<std::size_t>(i) * m + j] = c;
        }
    }
    std::vector<int> assign;
    return min_cost_assignment(cost, m, assign);
}

}  // namespace branchsim
