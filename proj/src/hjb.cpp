#include "branchsim/hjb.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "branchsim/cost.hpp"
#include "branchsim/rng.hpp"
#include "branchsim/util.hpp"

namespace branchsim {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ---------------------------------------------------------------------------
// Node indexing.
//
// Symmetrized level n stores one entry per sorted tuple 0 <= i_1 <= ... <=
// i_n < n_x.  Mapping the tuple to the strictly increasing (i_j + j) gives a
// combination, ranked in colexicographic order:
//   rank = sum_j C(i_j + j, j + 1),        count = C(n_x + n - 1, n).
// The odometer below enumerates tuples in exactly that order, so sweeps can
// keep a running rank.  Unsymmetrized level n stores the full tensor with
// slot-major strides n_x^j.
// ---------------------------------------------------------------------------

std::size_t sorted_count(int level, int n_x) {
    return binomial(static_cast<unsigned>(n_x + level - 1), static_cast<unsigned>(level));
}

std::size_t tensor_count(int level, int n_x) {
    std::size_t c = 1;
    for (int j = 0; j < level; ++j) {
        if (c > (std::size_t(1) << 40)) throw std::invalid_argument("hjb: grid too large");
        c *= static_cast<std::size_t>(n_x);
    }
    return c;
}

std::size_t sorted_rank(const std::vector<int>& idx) {
    std::size_t r = 0;
    for (std::size_t j = 0; j < idx.size(); ++j)
        r += binomial(static_cast<unsigned>(idx[j] + j), static_cast<unsigned>(j + 1));
    return r;
}

std::size_t tensor_rank(const std::vector<int>& idx, int n_x) {
    std::size_t r = 0;
    for (std::size_t j = idx.size(); j-- > 0;) r = r * static_cast<std::size_t>(n_x) + idx[j];
    return r;
}

// colex successor of a sorted tuple; false once exhausted
bool next_sorted(std::vector<int>& idx, int n_x) {
    const std::size_t n = idx.size();
    for (std::size_t j = 0; j < n; ++j) {
        const int cap = (j + 1 < n) ? idx[j + 1] : n_x - 1;
        if (idx[j] < cap) {
            ++idx[j];
            std::fill(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(j), 0);
            return true;
        }
    }
    return false;
}

// slot-0-fastest successor of a full tuple
bool next_tensor(std::vector<int>& idx, int n_x) {
    for (std::size_t j = 0; j < idx.size(); ++j) {
        if (idx[j] + 1 < n_x) {
            ++idx[j];
            std::fill(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(j), 0);
            return true;
        }
        idx[j] = 0;
    }
    return false;
}

std::vector<int> sorted_unrank(int level, std::size_t rank, int n_x) {
    std::vector<int> idx(static_cast<std::size_t>(level));
    for (int j = level - 1; j >= 0; --j) {
        // largest c with C(c, j+1) <= rank
        int c = j;  // C(j, j+1) = 0
        while (c + 1 < n_x + j && binomial(static_cast<unsigned>(c + 1),
                                           static_cast<unsigned>(j + 1)) <= rank)
            ++c;
        rank -= binomial(static_cast<unsigned>(c), static_cast<unsigned>(j + 1));
        idx[static_cast<std::size_t>(j)] = c - j;
    }
    return idx;
}

std::vector<int> tensor_unrank(int level, std::size_t rank, int n_x) {
    std::vector<int> idx(static_cast<std::size_t>(level));
    for (int j = 0; j < level; ++j) {
        idx[static_cast<std::size_t>(j)] = static_cast<int>(rank % n_x);
        rank /= static_cast<std::size_t>(n_x);
    }
    return idx;
}

Eigen::VectorXd vec1(double x) {
    Eigen::VectorXd v(1);
    v[0] = x;
    return v;
}

std::vector<Label> slot_labels(int n) {
    std::vector<Label> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) out.push_back(Label::root().child(static_cast<std::uint32_t>(j)));
    return out;
}

// Scans the action grid slot by slot; exact for the joint minimum because
// every term of the node value touches a single slot's action.  Strict
// improvement keeps the smallest action on ties.
template <class PerParticle>
HamiltonianValue scan_actions(int n_slots, const std::vector<double>& actions, PerParticle&& f) {
    HamiltonianValue out;
    out.actions.resize(static_cast<std::size_t>(n_slots));
    out.action_index.resize(static_cast<std::size_t>(n_slots));
    double total = 0.0;
    for (int slot = 0; slot < n_slots; ++slot) {
        double best = std::numeric_limits<double>::infinity();
        int best_i = 0;
        for (std::size_t ai = 0; ai < actions.size(); ++ai) {
            const double v = f(slot, actions[ai]);
            if (v < best) {
                best = v;
                best_i = static_cast<int>(ai);
            }
        }
        total += best;
        out.actions[static_cast<std::size_t>(slot)] = actions[static_cast<std::size_t>(best_i)];
        out.action_index[static_cast<std::size_t>(slot)] = best_i;
    }
    out.value = total;
    return out;
}

// Per-(slot, action) value for mean-field coefficients; bv(slot, k) yields
// the post-branching value.  Scratch vectors are reused across calls to keep
// the hot loop free of allocations.
template <class BV>
struct MFEval {
    const MeanFieldCoefficients* mf;
    const CostSpec* cost;
    const std::vector<Label>* labels;
    const UnlabeledMeasure* meas;
    const Configuration* cfg;
    const std::vector<double>* x;
    const std::vector<double>* q;
    const std::vector<double>* m2;
    double r;
    const BV* bv;
    Eigen::VectorXd xb = Eigen::VectorXd(1);
    Eigen::VectorXd ab = Eigen::VectorXd(1);

    double operator()(int slot, double a) {
        xb[0] = (*x)[static_cast<std::size_t>(slot)];
        ab[0] = a;
        double val = mf->drift(xb, *meas, ab)[0] * (*q)[static_cast<std::size_t>(slot)];
        const double sig = mf->diffusion(xb, *meas, ab)(0, 0);
        val += 0.5 * sig * sig * (*m2)[static_cast<std::size_t>(slot)];
        const double gam = mf->branch_rate(xb, *meas, ab);
        if (gam != 0.0) {
            const OffspringLaw law = mf->offspring(xb, *meas, ab);
            double mix = 0.0;
            for (std::size_t k = 0; k < law.p.size(); ++k)
                if (law.p[k] != 0.0) mix += law.p[k] * (*bv)(slot, static_cast<int>(k));
            val += gam * (mix - r);
        }
        val += cost->running((*labels)[static_cast<std::size_t>(slot)], xb, *cfg, ab);
        return val;
    }
};

// Same with label-aware per-particle coefficients.
template <class BV>
struct LabeledEval {
    const ModelCoefficients* model;
    const CostSpec* cost;
    const std::vector<Label>* labels;
    const Configuration* cfg;
    const std::vector<double>* x;
    const std::vector<double>* q;
    const std::vector<double>* m2;
    double r;
    const BV* bv;
    Eigen::VectorXd xb = Eigen::VectorXd(1);
    Eigen::VectorXd ab = Eigen::VectorXd(1);

    double operator()(int slot, double a) {
        const Label& who = (*labels)[static_cast<std::size_t>(slot)];
        xb[0] = (*x)[static_cast<std::size_t>(slot)];
        ab[0] = a;
        double val = model->drift(who, xb, *cfg, ab)[0] * (*q)[static_cast<std::size_t>(slot)];
        const double sig = model->diffusion(who, xb, *cfg, ab)(0, 0);
        val += 0.5 * sig * sig * (*m2)[static_cast<std::size_t>(slot)];
        const double gam = model->branch_rate(who, xb, *cfg, ab);
        if (gam != 0.0) {
            const OffspringLaw law = model->offspring(who, xb, *cfg, ab);
            double mix = 0.0;
            for (std::size_t k = 0; k < law.p.size(); ++k)
                if (law.p[k] != 0.0) mix += law.p[k] * (*bv)(slot, static_cast<int>(k));
            val += gam * (mix - r);
        }
        val += cost->running(who, xb, *cfg, ab);
        return val;
    }
};

// ---------------------------------------------------------------------------
// Solver core
// ---------------------------------------------------------------------------

struct Caps {
    double sigma_max = 0.0;
    double gamma_max = 0.0;
    double b_max = 0.0;
};

std::vector<double> axis_of(const HJBGeometry& geo) {
    std::vector<double> xs(static_cast<std::size_t>(geo.n_x));
    const double dx = (geo.x_hi - geo.x_lo) / (geo.n_x - 1);
    for (int i = 0; i < geo.n_x; ++i) xs[static_cast<std::size_t>(i)] = geo.x_lo + i * dx;
    xs.back() = geo.x_hi;
    return xs;
}

void check_geometry(const HJBGeometry& geo) {
    if (geo.n_x < 3) throw std::invalid_argument("hjb: need at least 3 spatial nodes");
    if (!(geo.x_hi > geo.x_lo)) throw std::invalid_argument("hjb: empty spatial box");
    if (geo.T <= 0.0) throw std::invalid_argument("hjb: horizon must be positive");
    if (geo.n_max < 0) throw std::invalid_argument("hjb: negative population cap");
    if (geo.store_stride < 0) throw std::invalid_argument("hjb: negative storage stride");
}

// Worst coefficient magnitudes over the axis, the action grid, and both a
// singleton and an n_max-fold population at each node; combined with the
// declared bounds so under-declared models still get a safe step.
template <class Probe>
Caps probe_caps(const CoefficientBounds& bounds, const HJBGeometry& geo,
                const ActionGrid& actions, Probe&& probe) {
    Caps caps;
    caps.sigma_max = bounds.diffusion_cap;
    caps.gamma_max = bounds.rate_cap;
    const std::vector<double> xs = axis_of(geo);
    const int copies = std::max(1, geo.n_max);
    for (double xv : xs) {
        for (int crowd = 0; crowd < 2; ++crowd) {
            const int m = crowd == 0 ? 1 : copies;
            if (crowd == 1 && copies == 1) break;
            std::vector<Atom> atoms;
            for (int j = 0; j < m; ++j)
                atoms.push_back(Atom{Label::root().child(static_cast<std::uint32_t>(j)), vec1(xv)});
            Configuration cfg(1, std::move(atoms));
            for (double a : actions.values) probe(xv, cfg, a, caps);
        }
    }
    return caps;
}

Caps mf_caps(const MeanFieldCoefficients& mf, const HJBGeometry& geo, const ActionGrid& actions) {
    return probe_caps(mf.bounds, geo, actions,
                      [&mf](double xv, const Configuration& cfg, double a, Caps& caps) {
                          const Eigen::VectorXd xb = vec1(xv);
                          const Eigen::VectorXd ab = vec1(a);
                          const UnlabeledMeasure& meas = cfg.unlabeled();
                          caps.b_max = std::max(caps.b_max, std::abs(mf.drift(xb, meas, ab)[0]));
                          caps.sigma_max =
                              std::max(caps.sigma_max, std::abs(mf.diffusion(xb, meas, ab)(0, 0)));
                          caps.gamma_max = std::max(caps.gamma_max, mf.branch_rate(xb, meas, ab));
                      });
}

Caps model_caps(const ModelCoefficients& model, const HJBGeometry& geo,
                const ActionGrid& actions) {
    return probe_caps(model.bounds, geo, actions,
                      [&model](double xv, const Configuration& cfg, double a, Caps& caps) {
                          const Label& who = cfg.atom(0).label;
                          const Eigen::VectorXd xb = vec1(xv);
                          const Eigen::VectorXd ab = vec1(a);
                          caps.b_max =
                              std::max(caps.b_max, std::abs(model.drift(who, xb, cfg, ab)[0]));
                          caps.sigma_max = std::max(caps.sigma_max,
                                                    std::abs(model.diffusion(who, xb, cfg, ab)(0, 0)));
                          caps.gamma_max =
                              std::max(caps.gamma_max, model.branch_rate(who, xb, cfg, ab));
                      });
}

void check_stability(const Caps& caps, double dt, double dx) {
    if (caps.sigma_max > 0.0) {
        const double bound = dx * dx / (caps.sigma_max * caps.sigma_max);
        if (dt > bound * (1.0 + 1e-9)) {
            std::ostringstream msg;
            msg << "hjb: step " << format_double(dt) << " exceeds the diffusion stability bound "
                << format_double(bound);
            throw std::invalid_argument(msg.str());
        }
    }
    const double budget = dt * (caps.gamma_max + caps.b_max / dx);
    if (budget > 1.0 + 1e-9) {
        std::ostringstream msg;
        msg << "hjb: step " << format_double(dt)
            << " exceeds the branching/advection budget: dt * (gamma_max + b_max/dx) = "
            << format_double(budget) << " > 1";
        throw std::invalid_argument(msg.str());
    }
}

struct LevelBook {
    int n = 0;
    std::size_t count = 0;
    std::vector<Configuration> configs;  // synthetic labels (0),(1),... per node
};

std::vector<LevelBook> build_levels(const HJBGeometry& geo, const std::vector<double>& xs,
                                    bool symmetrized) {
    std::vector<LevelBook> books(static_cast<std::size_t>(geo.n_max) + 1);
    std::size_t total = 0;
    for (int n = 0; n <= geo.n_max; ++n) {
        LevelBook& book = books[static_cast<std::size_t>(n)];
        book.n = n;
        book.count = symmetrized ? sorted_count(n, geo.n_x) : tensor_count(n, geo.n_x);
        total += book.count;
        if (total > (std::size_t(1) << 27))
            throw std::invalid_argument("hjb: grid too large (more than 2^27 nodes)");
        book.configs.reserve(book.count);
        const std::vector<Label> labels = slot_labels(n);
        std::vector<int> idx(static_cast<std::size_t>(n), 0);
        for (std::size_t rk = 0; rk < book.count; ++rk) {
            std::vector<Atom> atoms;
            atoms.reserve(static_cast<std::size_t>(n));
            for (int j = 0; j < n; ++j)
                atoms.push_back(
                    Atom{labels[static_cast<std::size_t>(j)], vec1(xs[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])])});
            book.configs.emplace_back(1, std::move(atoms));
            if (rk + 1 < book.count)
                symmetrized ? next_sorted(idx, geo.n_x) : next_tensor(idx, geo.n_x);
        }
    }
    return books;
}

std::vector<std::size_t> stored_steps(int n_t, int stride) {
    std::vector<std::size_t> ms;
    for (int m = 0; m < n_t; m += stride) ms.push_back(static_cast<std::size_t>(m));
    ms.push_back(static_cast<std::size_t>(n_t));
    return ms;
}

struct Workspace {
    // current/next value slice per level
    std::vector<std::vector<double>> cur, next;
    // per-node scratch
    std::vector<int> idx, nbr;
    std::vector<double> x, q, m2;
    std::vector<std::vector<double>> branch;  // lazy cache, NaN = not yet computed
};

// One backward solve shared by the symmetric and the labeled paths; Coef is
// MFEval or LabeledEval with its measure pointers already wired to `node_cfg`
// and `node_meas` owned here.
template <bool Symmetric, class MakeEval>
HJBSolution solve_core(const HJBGeometry& geo, const ActionGrid& actions, int n_t,
                       const CostSpec& cost, const Caps& caps, MakeEval&& make_eval) {
    check_geometry(geo);
    actions.validate();
    if (n_t < 1) throw std::invalid_argument("hjb: need at least one time step");
    const std::vector<double> xs = axis_of(geo);
    const double dx = (geo.x_hi - geo.x_lo) / (geo.n_x - 1);
    const double dt = geo.T / n_t;
    check_stability(caps, dt, dx);

    const int stride = geo.store_stride > 0 ? geo.store_stride : std::max(1, (n_t + 63) / 64);
    const std::vector<std::size_t> kept = stored_steps(n_t, stride);

    std::vector<LevelBook> books = build_levels(geo, xs, Symmetric);

    HJBSolution sol;
    ValueGrid& grid = sol.grid;
    grid.x_lo = geo.x_lo;
    grid.x_hi = geo.x_hi;
    grid.n_x = geo.n_x;
    grid.T = geo.T;
    grid.n_max = geo.n_max;
    grid.symmetrized = Symmetric;
    grid.xs = xs;
    grid.stored_ts.resize(kept.size());
    for (std::size_t s = 0; s < kept.size(); ++s)
        grid.stored_ts[s] = dt * static_cast<double>(kept[s]);
    grid.stored_ts.back() = geo.T;
    grid.values.assign(kept.size(), {});

    auto policy_data = std::make_shared<GridPolicyData>();
    policy_data->x_lo = geo.x_lo;
    policy_data->x_hi = geo.x_hi;
    policy_data->n_x = geo.n_x;
    policy_data->n_max = geo.n_max;
    policy_data->symmetrized = Symmetric;
    policy_data->stored_ts = grid.stored_ts;
    policy_data->actions = actions.values;
    policy_data->argmin.assign(kept.size(), {});
    for (std::size_t s = 0; s < kept.size(); ++s) {
        grid.values[s].resize(books.size());
        policy_data->argmin[s].resize(books.size());
        for (const LevelBook& book : books) {
            grid.values[s][static_cast<std::size_t>(book.n)].assign(book.count, kNaN);
            policy_data->argmin[s][static_cast<std::size_t>(book.n)].assign(
                book.count * static_cast<std::size_t>(book.n), 0);
        }
    }
    // step index -> storage slot (or npos)
    std::vector<std::size_t> slot_of(static_cast<std::size_t>(n_t) + 1,
                                     std::numeric_limits<std::size_t>::max());
    for (std::size_t s = 0; s < kept.size(); ++s) slot_of[kept[s]] = s;

    Workspace ws;
    ws.cur.resize(books.size());
    ws.next.resize(books.size());
    for (const LevelBook& book : books) {
        ws.cur[static_cast<std::size_t>(book.n)].assign(book.count, 0.0);
        ws.next[static_cast<std::size_t>(book.n)].assign(book.count, 0.0);
    }

    // terminal data
    for (const LevelBook& book : books) {
        std::vector<double>& slice = ws.cur[static_cast<std::size_t>(book.n)];
        for (std::size_t rk = 0; rk < book.count; ++rk) {
            slice[rk] = cost.terminal(book.configs[rk]);
            if (!std::isfinite(slice[rk]))
                throw std::invalid_argument("hjb: terminal data non-finite on the grid");
        }
        grid.values.back()[static_cast<std::size_t>(book.n)] = slice;
    }

    const std::vector<double>& avals = actions.values;

    // one Hamiltonian sweep over a level at the values in ws.cur; writes
    // ws.next when stepping and the argmin table when `store` is set.
    // Node updates are independent (they only read ws.cur), so this loop is
    // the natural place to parallelize if ever needed.
    auto sweep_level = [&](const LevelBook& book, bool write_next, std::size_t store_slot,
                           double t_now) {
        const int n = book.n;
        const std::size_t ln = static_cast<std::size_t>(n);
        if (n == 0) {
            // empty population: no particles, zero generator
            if (write_next) ws.next[0][0] = ws.cur[0][0];
            return;
        }
        ws.idx.assign(ln, 0);
        ws.nbr.assign(ln, 0);
        ws.x.assign(ln, 0.0);
        ws.q.assign(ln, 0.0);
        ws.m2.assign(ln, 0.0);
        ws.branch.assign(ln, {});
        const std::vector<double>& cur = ws.cur[ln];
        const std::vector<Label> labels = slot_labels(n);

        auto value_at_shift = [&](int slot, int to) {
            // neighbour along one axis with mirror closure, re-sorted when needed
            ws.nbr = ws.idx;
            ws.nbr[static_cast<std::size_t>(slot)] = to;
            if constexpr (Symmetric) {
                std::sort(ws.nbr.begin(), ws.nbr.end());
                return cur[sorted_rank(ws.nbr)];
            } else {
                return cur[tensor_rank(ws.nbr, geo.n_x)];
            }
        };

        for (std::size_t rk = 0; rk < book.count; ++rk) {
            const Configuration& node_cfg = book.configs[rk];
            double r = cur[rk];
            for (int j = 0; j < n; ++j) {
                const int i = ws.idx[static_cast<std::size_t>(j)];
                ws.x[static_cast<std::size_t>(j)] = xs[static_cast<std::size_t>(i)];
                const double up = value_at_shift(j, i + 1 < geo.n_x ? i + 1 : geo.n_x - 2);
                const double dn = value_at_shift(j, i > 0 ? i - 1 : 1);
                ws.q[static_cast<std::size_t>(j)] = (up - dn) / (2.0 * dx);
                ws.m2[static_cast<std::size_t>(j)] = (up - 2.0 * r + dn) / (dx * dx);
                ws.branch[static_cast<std::size_t>(j)].clear();
            }

            auto bv = [&](int slot, int k) -> double {
                if (k == 1) return r;  // duplicating once is the identity
                const int target = n + k - 1;
                if (target > geo.n_max) return r;  // truncated to a no-op
                std::vector<double>& cache = ws.branch[static_cast<std::size_t>(slot)];
                if (static_cast<int>(cache.size()) <= k) cache.resize(static_cast<std::size_t>(k) + 1, kNaN);
                double& slotk = cache[static_cast<std::size_t>(k)];
                if (std::isnan(slotk)) {
                    std::vector<int> post;
                    post.reserve(static_cast<std::size_t>(target));
                    for (int j = 0; j < n; ++j) {
                        if (j == slot && k == 0) continue;
                        post.push_back(ws.idx[static_cast<std::size_t>(j)]);
                        if (j == slot)
                            post.insert(post.end(), static_cast<std::size_t>(k - 1),
                                        ws.idx[static_cast<std::size_t>(j)]);
                    }
                    slotk = Symmetric ? ws.cur[static_cast<std::size_t>(target)][sorted_rank(post)]
                                      : ws.cur[static_cast<std::size_t>(target)][tensor_rank(post, geo.n_x)];
                }
                return slotk;
            };

            auto eval = make_eval(node_cfg, labels, ws.x, ws.q, ws.m2, r, bv);
            HamiltonianValue ham = scan_actions(n, avals, eval);

            if (store_slot != std::numeric_limits<std::size_t>::max()) {
                std::uint16_t* row =
                    policy_data->argmin[store_slot][ln].data() + rk * ln;
                for (int j = 0; j < n; ++j)
                    row[j] = static_cast<std::uint16_t>(ham.action_index[static_cast<std::size_t>(j)]);
            }
            if (write_next) {
                const double w = r + dt * ham.value;
                if (!std::isfinite(w)) {
                    std::ostringstream msg;
                    msg << "hjb: value became non-finite at t=" << format_double(t_now - dt)
                        << ", level " << n << ", node " << rk;
                    throw std::runtime_error(msg.str());
                }
                ws.next[ln][rk] = w;
            }
            if (rk + 1 < book.count) {
                if constexpr (Symmetric)
                    next_sorted(ws.idx, geo.n_x);
                else
                    next_tensor(ws.idx, geo.n_x);
            }
        }
    };

    for (int m = n_t; m >= 1; --m) {
        const double t_now = dt * m;
        const std::size_t capture = slot_of[static_cast<std::size_t>(m)];
        for (const LevelBook& book : books) sweep_level(book, true, capture, t_now);
        std::swap(ws.cur, ws.next);
        const std::size_t keep = slot_of[static_cast<std::size_t>(m) - 1];
        if (keep != std::numeric_limits<std::size_t>::max()) {
            for (const LevelBook& book : books)
                grid.values[keep][static_cast<std::size_t>(book.n)] =
                    ws.cur[static_cast<std::size_t>(book.n)];
        }
    }
    // argmin of the t = 0 slice (every later stored slice was captured while
    // it was being consumed)
    for (const LevelBook& book : books) sweep_level(book, false, 0, 0.0);

    sol.policy.data = std::move(policy_data);
    return sol;
}

}  // namespace

// ---------------------------------------------------------------------------
// ActionGrid
// ---------------------------------------------------------------------------

ActionGrid ActionGrid::equispaced(double lo, double hi, int count) {
    if (count < 1) throw std::invalid_argument("action grid: need at least one action");
    if (!(hi >= lo)) throw std::invalid_argument("action grid: empty box");
    ActionGrid g;
    g.a_lo = lo;
    g.a_hi = hi;
    g.values.resize(static_cast<std::size_t>(count));
    if (count == 1) {
        g.values[0] = 0.5 * (lo + hi);
    } else {
        const double step = (hi - lo) / (count - 1);
        for (int i = 0; i < count; ++i) g.values[static_cast<std::size_t>(i)] = lo + i * step;
        g.values.back() = hi;
    }
    return g;
}

void ActionGrid::validate() const {
    if (values.empty()) throw std::invalid_argument("action grid: empty");
    if (values.size() >= 65536) throw std::invalid_argument("action grid: too many actions");
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) throw std::invalid_argument("action grid: non-finite action");
        if (i > 0 && values[i - 1] > values[i])
            throw std::invalid_argument("action grid: not sorted");
        if (values[i] < a_lo - 1e-12 || values[i] > a_hi + 1e-12)
            throw std::invalid_argument("action grid: action outside the declared box");
    }
}

// ---------------------------------------------------------------------------
// Public Hamiltonian
// ---------------------------------------------------------------------------

HamiltonianValue hamiltonian(const HamiltonianInput& in, const MeanFieldCoefficients& mf,
                             const CostSpec& cost, const ActionGrid& actions) {
    actions.validate();
    const std::size_t n = in.x.size();
    if (in.q.size() != n || in.m2.size() != n)
        throw std::invalid_argument("hamiltonian: derivative arrays must match the positions");
    if (in.r_branch.size() != n)
        throw std::invalid_argument("hamiltonian: one branch-value row per particle required");

    std::vector<Eigen::VectorXd> pts;
    pts.reserve(n);
    for (double xv : in.x) pts.push_back(vec1(xv));
    std::sort(pts.begin(), pts.end(),
              [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return a[0] < b[0]; });
    UnlabeledMeasure meas{1, std::move(pts)};

    const std::vector<Label> labels = slot_labels(static_cast<int>(n));
    std::vector<Atom> atoms;
    atoms.reserve(n);
    for (std::size_t j = 0; j < n; ++j) atoms.push_back(Atom{labels[j], vec1(in.x[j])});
    Configuration cfg(1, std::move(atoms));

    std::function<double(int, int)> bv = [&in](int slot, int k) -> double {
        const std::vector<double>& row = in.r_branch[static_cast<std::size_t>(slot)];
        if (k >= 0 && static_cast<std::size_t>(k) < row.size()) return row[static_cast<std::size_t>(k)];
        if (k == 1) return in.r;  // identity branching
        throw std::out_of_range("hamiltonian: offspring count outside the branch-value table");
    };

    MFEval<std::function<double(int, int)>> eval{&mf,   &cost, &labels, &meas, &cfg,
                                                 &in.x, &in.q, &in.m2,  in.r,  &bv};
    return scan_actions(static_cast<int>(n), actions.values, eval);
}

// ---------------------------------------------------------------------------
// ValueGrid
// ---------------------------------------------------------------------------

std::size_t ValueGrid::level_count(int level) const {
    if (level < 0 || level > n_max) throw std::out_of_range("value grid: level out of range");
    return symmetrized ? sorted_count(level, n_x) : tensor_count(level, n_x);
}

std::vector<int> ValueGrid::unrank(int level, std::size_t rank) const {
    if (rank >= level_count(level)) throw std::out_of_range("value grid: rank out of range");
    return symmetrized ? sorted_unrank(level, rank, n_x) : tensor_unrank(level, rank, n_x);
}

std::size_t ValueGrid::rank_of(int level, const std::vector<int>& idx) const {
    if (static_cast<int>(idx.size()) != level)
        throw std::invalid_argument("value grid: index arity mismatch");
    for (int i : idx)
        if (i < 0 || i >= n_x) throw std::out_of_range("value grid: axis index out of range");
    if (symmetrized) {
        std::vector<int> s = idx;
        std::sort(s.begin(), s.end());
        return sorted_rank(s);
    }
    return tensor_rank(idx, n_x);
}

double ValueGrid::value_at(double t, const Configuration& lam) const {
    const int n = static_cast<int>(lam.size());
    if (n > n_max) throw ValueUndefined("value grid: population exceeds the stored levels");
    if (t < -1e-9 || t > T + 1e-9) throw ValueUndefined("value grid: time outside the horizon");
    t = std::clamp(t, 0.0, T);

    std::vector<double> coords(static_cast<std::size_t>(n));
    if (symmetrized) {
        const UnlabeledMeasure& pi = lam.unlabeled();
        for (int j = 0; j < n; ++j) coords[static_cast<std::size_t>(j)] = pi.points[static_cast<std::size_t>(j)][0];
    } else {
        for (int j = 0; j < n; ++j) coords[static_cast<std::size_t>(j)] = lam.atom(static_cast<std::size_t>(j)).pos[0];
    }
    const double dx = (x_hi - x_lo) / (n_x - 1);
    std::vector<int> cell(static_cast<std::size_t>(n));
    std::vector<double> frac(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
        double c = coords[static_cast<std::size_t>(j)];
        if (c < x_lo - 1e-12 || c > x_hi + 1e-12)
            throw ValueUndefined("value grid: position escaped the box");
        c = std::clamp(c, x_lo, x_hi);
        int i = std::min(n_x - 2, static_cast<int>((c - x_lo) / dx));
        while (i > 0 && xs[static_cast<std::size_t>(i)] > c) --i;
        while (i + 2 < n_x && xs[static_cast<std::size_t>(i) + 1] < c) ++i;
        cell[static_cast<std::size_t>(j)] = i;
        // exact node hits must reproduce the stored value bitwise
        double f;
        if (c == xs[static_cast<std::size_t>(i)])
            f = 0.0;
        else if (c == xs[static_cast<std::size_t>(i) + 1])
            f = 1.0;
        else
            f = std::clamp((c - xs[static_cast<std::size_t>(i)]) / dx, 0.0, 1.0);
        frac[static_cast<std::size_t>(j)] = f;
    }

    const auto ts_hi = std::upper_bound(stored_ts.begin(), stored_ts.end(), t);
    std::size_t s = ts_hi == stored_ts.begin()
                        ? 0
                        : static_cast<std::size_t>(ts_hi - stored_ts.begin()) - 1;
    s = std::min(s, stored_ts.size() - 2);
    const double u =
        std::clamp((t - stored_ts[s]) / (stored_ts[s + 1] - stored_ts[s]), 0.0, 1.0);

    const std::vector<double>& lo_slice = values[s][static_cast<std::size_t>(n)];
    const std::vector<double>& hi_slice = values[s + 1][static_cast<std::size_t>(n)];
    double lo = 0.0, hi = 0.0;
    std::vector<int> corner(static_cast<std::size_t>(n));
    for (std::size_t mask = 0; mask < (std::size_t(1) << n); ++mask) {
        double w = 1.0;
        for (int j = 0; j < n; ++j) {
            const bool up = (mask >> j) & 1u;
            corner[static_cast<std::size_t>(j)] = cell[static_cast<std::size_t>(j)] + (up ? 1 : 0);
            w *= up ? frac[static_cast<std::size_t>(j)] : 1.0 - frac[static_cast<std::size_t>(j)];
        }
        std::size_t rk;
        if (symmetrized) {
            std::vector<int> sorted = corner;
            std::sort(sorted.begin(), sorted.end());
            rk = sorted_rank(sorted);
        } else {
            rk = tensor_rank(corner, n_x);
        }
        lo += w * lo_slice[rk];
        hi += w * hi_slice[rk];
    }
    return (1.0 - u) * lo + u * hi;
}

std::string ValueGrid::meta_json() const {
    nlohmann::json j;
    j["format"] = "hjb-value-grid-v1";
    j["x_lo"] = x_lo;
    j["x_hi"] = x_hi;
    j["n_x"] = n_x;
    j["T"] = T;
    j["n_max"] = n_max;
    j["symmetrized"] = symmetrized;
    j["stored_ts"] = stored_ts;
    std::vector<std::size_t> counts;
    for (int n = 0; n <= n_max; ++n) counts.push_back(level_count(n));
    j["level_counts"] = counts;
    return j.dump();
}

// ---------------------------------------------------------------------------
// GridPolicy
// ---------------------------------------------------------------------------

double GridPolicy::action_for(double t, const Label& who, double x,
                              const Configuration& lam) const {
    const GridPolicyData& d = *data;
    if (d.actions.empty()) throw std::logic_error("grid policy: empty action set");
    const int n = static_cast<int>(lam.size());
    if (n == 0) return d.actions.front();
    const double dx = (d.x_hi - d.x_lo) / (d.n_x - 1);

    std::vector<double> coords;
    int slot = -1;
    if (d.symmetrized) {
        const UnlabeledMeasure& pi = lam.unlabeled();
        coords.resize(static_cast<std::size_t>(n));
        for (int j = 0; j < n; ++j) coords[static_cast<std::size_t>(j)] = pi.points[static_cast<std::size_t>(j)][0];
        for (int j = 0; j < n; ++j)
            if (coords[static_cast<std::size_t>(j)] == x) {
                slot = j;
                break;
            }
        if (slot < 0) {
            // nearest coordinate (x should be one of them)
            double best = std::numeric_limits<double>::infinity();
            for (int j = 0; j < n; ++j) {
                const double gap = std::abs(coords[static_cast<std::size_t>(j)] - x);
                if (gap < best) {
                    best = gap;
                    slot = j;
                }
            }
        }
    } else {
        const int at = lam.find(who);
        if (at < 0) throw std::invalid_argument("grid policy: label absent from the population");
        coords.resize(static_cast<std::size_t>(n));
        for (int j = 0; j < n; ++j) coords[static_cast<std::size_t>(j)] = lam.atom(static_cast<std::size_t>(j)).pos[0];
        slot = at;
    }

    int level = n;
    if (n > d.n_max) {
        // window of n_max coordinates around the particle
        level = d.n_max;
        if (level == 0) return d.actions.front();
        int w0 = std::clamp(slot - (level - 1) / 2, 0, n - level);
        coords.assign(coords.begin() + w0, coords.begin() + w0 + level);
        slot -= w0;
    }

    std::vector<int> idx(static_cast<std::size_t>(level));
    for (int j = 0; j < level; ++j) {
        const double c = std::clamp(coords[static_cast<std::size_t>(j)], d.x_lo, d.x_hi);
        idx[static_cast<std::size_t>(j)] =
            std::clamp(static_cast<int>(std::lround((c - d.x_lo) / dx)), 0, d.n_x - 1);
    }
    std::size_t rk = d.symmetrized ? sorted_rank(idx) : tensor_rank(idx, d.n_x);

    // smallest stored slice at or after t (the argmin minimizing the update
    // that produced the interval ending there), clamped to the ends
    const auto it = std::lower_bound(d.stored_ts.begin(), d.stored_ts.end(), t - 1e-12);
    const std::size_t s = it == d.stored_ts.end()
                              ? d.stored_ts.size() - 1
                              : static_cast<std::size_t>(it - d.stored_ts.begin());

    const std::vector<std::uint16_t>& rows = d.argmin[s][static_cast<std::size_t>(level)];
    const std::uint16_t a_idx = rows[rk * static_cast<std::size_t>(level) + static_cast<std::size_t>(slot)];
    return d.actions[a_idx];
}

ControlPolicy GridPolicy::policy() const {
    ControlPolicy pol;
    pol.kind = ControlPolicy::Kind::Grid;
    pol.adim = 1;
    pol.symmetric = data->symmetrized;
    auto self = *this;
    pol.act = [self](double t, const Label& who, const Eigen::VectorXd& x,
                     const Configuration& lam) {
        Eigen::VectorXd a(1);
        a[0] = self.action_for(t, who, x[0], lam);
        return a;
    };
    return pol;
}

// ---------------------------------------------------------------------------
// Solvers
// ---------------------------------------------------------------------------

HJBSolution hjb_solve(const MeanFieldCoefficients& mf, const CostSpec& cost,
                      const HJBGeometry& geo, const ActionGrid& actions, int n_t) {
    check_geometry(geo);
    actions.validate();
    const Caps caps = mf_caps(mf, geo, actions);
    return solve_core<true>(
        geo, actions, n_t, cost, caps,
        [&mf, &cost](const Configuration& cfg, const std::vector<Label>& labels,
                     const std::vector<double>& x, const std::vector<double>& q,
                     const std::vector<double>& m2, double r, const auto& bv) {
            return MFEval<std::decay_t<decltype(bv)>>{&mf, &cost, &labels, &cfg.unlabeled(),
                                                      &cfg, &x,   &q,      &m2,
                                                      r,   &bv};
        });
}

HJBSolution hjb_solve_labeled(const ModelCoefficients& model, const CostSpec& cost,
                              const HJBGeometry& geo, const ActionGrid& actions, int n_t) {
    check_geometry(geo);
    actions.validate();
    const Caps caps = model_caps(model, geo, actions);
    return solve_core<false>(
        geo, actions, n_t, cost, caps,
        [&model, &cost](const Configuration& cfg, const std::vector<Label>& labels,
                        const std::vector<double>& x, const std::vector<double>& q,
                        const std::vector<double>& m2, double r, const auto& bv) {
            return LabeledEval<std::decay_t<decltype(bv)>>{&model, &cost, &labels, &cfg,
                                                           &x,     &q,    &m2,     r,
                                                           &bv};
        });
}

int hjb_auto_steps(const MeanFieldCoefficients& mf, const HJBGeometry& geo,
                   const ActionGrid& actions) {
    check_geometry(geo);
    actions.validate();
    const Caps caps = mf_caps(mf, geo, actions);
    const double dx = (geo.x_hi - geo.x_lo) / (geo.n_x - 1);
    // one budget covering the diffusion bound, the branching rate, and the
    // drift on the cell scale keeps every update a monotone average
    const double denom = caps.sigma_max * caps.sigma_max / (dx * dx) + caps.gamma_max +
                         caps.b_max / dx;
    const double dt_cap = denom > 0.0 ? 1.0 / denom : geo.T;
    int n_t = static_cast<int>(std::ceil(geo.T / dt_cap - 1e-12));
    return std::max({n_t, 64, 1});
}

// ---------------------------------------------------------------------------
// Permutation audit
// ---------------------------------------------------------------------------

namespace {

double probe_uniform(std::uint64_t seed, const Label& who, std::uint64_t counter) {
    return noise_uniform(NoiseKey{seed, who}, NoiseStream::Mark, counter);
}

}  // namespace

std::string PermutationReport::summary() const {
    std::ostringstream os;
    os << (pass ? "pass" : "FAIL") << ": " << probes << " probes, " << value_mismatches
       << " value mismatches (worst gap " << format_double(worst_value_gap) << "), "
       << action_mismatches << " unequal actions at equal positions";
    if (!witness.empty()) os << "; first: " << witness;
    return os.str();
}

PermutationReport permutation_invariance_check(const HJBSolution& sol, int probes,
                                               std::uint64_t seed) {
    const ValueGrid& g = sol.grid;
    PermutationReport rep;
    rep.probes = probes;
    if (g.n_max < 1) {
        rep.pass = true;
        return rep;
    }
    const Label root = Label::root();
    for (int p = 0; p < probes; ++p) {
        const std::uint64_t ps = derive_seed(seed, static_cast<std::uint64_t>(p));
        std::uint64_t ctr = 0;
        const int n = 1 + static_cast<int>(noise_bits(NoiseKey{ps, root}, NoiseStream::Mark, ctr++) %
                                           static_cast<std::uint64_t>(g.n_max));
        const double t = g.T * probe_uniform(ps, root, ctr++);
        std::vector<double> coords(static_cast<std::size_t>(n));
        for (int j = 0; j < n; ++j)
            coords[static_cast<std::size_t>(j)] =
                g.x_lo + (g.x_hi - g.x_lo) * probe_uniform(ps, root, ctr++);

        // same multiset of positions under two different label assignments
        std::vector<double> shuffled = coords;
        for (int j = n - 1; j > 0; --j) {
            const std::uint64_t pick =
                noise_bits(NoiseKey{ps, root}, NoiseStream::Mark, ctr++) %
                static_cast<std::uint64_t>(j + 1);
            std::swap(shuffled[static_cast<std::size_t>(j)], shuffled[pick]);
        }
        std::vector<Atom> a1, a2;
        for (int j = 0; j < n; ++j) {
            const Label who = root.child(static_cast<std::uint32_t>(j));
            a1.push_back(Atom{who, vec1(coords[static_cast<std::size_t>(j)])});
            a2.push_back(Atom{who, vec1(shuffled[static_cast<std::size_t>(j)])});
        }
        const Configuration lam1(1, std::move(a1));
        const Configuration lam2(1, std::move(a2));
        const double v1 = g.value_at(t, lam1);
        const double v2 = g.value_at(t, lam2);
        if (v1 != v2) {
            ++rep.value_mismatches;
            const double gap = std::abs(v1 - v2);
            if (gap > rep.worst_value_gap) rep.worst_value_gap = gap;
            if (rep.witness.empty()) {
                std::ostringstream os;
                os << "values " << format_double(v1) << " vs " << format_double(v2)
                   << " for a permuted " << n << "-particle population at t=" << format_double(t);
                rep.witness = os.str();
            }
        }

        // equal positions must draw equal actions
        if (g.n_max >= 2 && sol.policy.data) {
            const double xv = g.x_lo + (g.x_hi - g.x_lo) * probe_uniform(ps, root, ctr++);
            std::vector<Atom> twins;
            twins.push_back(Atom{root.child(0), vec1(xv)});
            twins.push_back(Atom{root.child(1), vec1(xv)});
            const Configuration pair(1, std::move(twins));
            const double u1 = sol.policy.action_for(t, root.child(0), xv, pair);
            const double u2 = sol.policy.action_for(t, root.child(1), xv, pair);
            if (u1 != u2) {
                ++rep.action_mismatches;
                if (rep.witness.empty()) {
                    std::ostringstream os;
                    os << "actions " << format_double(u1) << " vs " << format_double(u2)
                       << " for twin particles at x=" << format_double(xv)
                       << ", t=" << format_double(t);
                    rep.witness = os.str();
                }
            }
        }
    }
    rep.pass = rep.value_mismatches == 0 && rep.action_mismatches == 0;
    return rep;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace {

void write_file(const std::filesystem::path& p, const void* data, std::size_t bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("hjb: cannot open " + p.string() + " for writing");
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    if (!out) throw std::runtime_error("hjb: short write to " + p.string());
}

std::vector<char> read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("hjb: cannot open " + p.string());
    const std::streamsize bytes = in.tellg();
    in.seekg(0);
    std::vector<char> buf(static_cast<std::size_t>(bytes));
    in.read(buf.data(), bytes);
    if (!in) throw std::runtime_error("hjb: short read from " + p.string());
    return buf;
}

}  // namespace

void save_value_grid(const HJBSolution& sol, const std::string& dir) {
    const ValueGrid& g = sol.grid;
    const GridPolicyData& pd = *sol.policy.data;
    std::filesystem::create_directories(dir);

    nlohmann::json meta;
    meta["format"] = "hjb-value-grid-v1";
    meta["x_lo"] = g.x_lo;
    meta["x_hi"] = g.x_hi;
    meta["n_x"] = g.n_x;
    meta["T"] = g.T;
    meta["n_max"] = g.n_max;
    meta["symmetrized"] = g.symmetrized;
    meta["stored_ts"] = g.stored_ts;
    meta["actions"] = pd.actions;
    std::vector<std::size_t> counts;
    for (int n = 0; n <= g.n_max; ++n) counts.push_back(g.level_count(n));
    meta["level_counts"] = counts;
    {
        std::ofstream out(std::filesystem::path(dir) / "meta.json", std::ios::trunc);
        if (!out) throw std::runtime_error("hjb: cannot write meta.json");
        out << meta.dump(2) << '\n';
    }

    std::vector<double> flat;
    for (const auto& slice : g.values)
        for (const auto& level : slice) flat.insert(flat.end(), level.begin(), level.end());
    write_file(std::filesystem::path(dir) / "values.bin", flat.data(),
               flat.size() * sizeof(double));

    std::vector<std::uint16_t> pflat;
    for (const auto& slice : pd.argmin)
        for (const auto& level : slice) pflat.insert(pflat.end(), level.begin(), level.end());
    write_file(std::filesystem::path(dir) / "policy.bin", pflat.data(),
               pflat.size() * sizeof(std::uint16_t));
}

HJBSolution load_value_grid(const std::string& dir) {
    nlohmann::json meta;
    {
        std::ifstream in(std::filesystem::path(dir) / "meta.json");
        if (!in) throw std::runtime_error("hjb: cannot open meta.json");
        in >> meta;
    }
    if (meta.value("format", "") != std::string("hjb-value-grid-v1"))
        throw std::runtime_error("hjb: unrecognized grid format");

    HJBSolution sol;
    ValueGrid& g = sol.grid;
    g.x_lo = meta.at("x_lo").get<double>();
    g.x_hi = meta.at("x_hi").get<double>();
    g.n_x = meta.at("n_x").get<int>();
    g.T = meta.at("T").get<double>();
    g.n_max = meta.at("n_max").get<int>();
    g.symmetrized = meta.at("symmetrized").get<bool>();
    g.stored_ts = meta.at("stored_ts").get<std::vector<double>>();
    HJBGeometry geo;
    geo.x_lo = g.x_lo;
    geo.x_hi = g.x_hi;
    geo.n_x = g.n_x;
    geo.T = g.T;
    geo.n_max = g.n_max;
    check_geometry(geo);
    g.xs = axis_of(geo);

    const std::vector<std::size_t> counts = meta.at("level_counts").get<std::vector<std::size_t>>();
    if (counts.size() != static_cast<std::size_t>(g.n_max) + 1)
        throw std::runtime_error("hjb: level count mismatch in metadata");
    for (int n = 0; n <= g.n_max; ++n)
        if (counts[static_cast<std::size_t>(n)] != g.level_count(n))
            throw std::runtime_error("hjb: stored level sizes disagree with the geometry");

    const std::vector<char> vbuf = read_file(std::filesystem::path(dir) / "values.bin");
    std::size_t per_slice = 0;
    for (std::size_t c : counts) per_slice += c;
    const std::size_t n_slices = g.stored_ts.size();
    if (vbuf.size() != n_slices * per_slice * sizeof(double))
        throw std::runtime_error("hjb: values.bin has the wrong size");
    const double* vp = reinterpret_cast<const double*>(vbuf.data());
    g.values.assign(n_slices, {});
    for (std::size_t s = 0; s < n_slices; ++s) {
        g.values[s].resize(counts.size());
        for (std::size_t n = 0; n < counts.size(); ++n) {
            g.values[s][n].assign(vp, vp + counts[n]);
            vp += counts[n];
        }
    }

    auto pd = std::make_shared<GridPolicyData>();
    pd->x_lo = g.x_lo;
    pd->x_hi = g.x_hi;
    pd->n_x = g.n_x;
    pd->n_max = g.n_max;
    pd->symmetrized = g.symmetrized;
    pd->stored_ts = g.stored_ts;
    pd->actions = meta.at("actions").get<std::vector<double>>();
    std::size_t slots_per_slice = 0;
    for (std::size_t n = 0; n < counts.size(); ++n) slots_per_slice += counts[n] * n;
    const std::vector<char> pbuf = read_file(std::filesystem::path(dir) / "policy.bin");
    if (pbuf.size() != n_slices * slots_per_slice * sizeof(std::uint16_t))
        throw std::runtime_error("hjb: policy.bin has the wrong size");
    const std::uint16_t* pp = reinterpret_cast<const std::uint16_t*>(pbuf.data());
    pd->argmin.assign(n_slices, {});
    for (std::size_t s = 0; s < n_slices; ++s) {
        pd->argmin[s].resize(counts.size());
        for (std::size_t n = 0; n < counts.size(); ++n) {
            pd->argmin[s][n].assign(pp, pp + counts[n] * n);
            pp += counts[n] * n;
        }
    }
    for (const auto& slice : pd->argmin)
        for (const auto& level : slice)
            for (std::uint16_t v : level)
                if (v >= pd->actions.size())
                    throw std::runtime_error("hjb: stored action index out of range");
    sol.policy.data = std::move(pd);
    return sol;
}

}  // namespace branchsim
