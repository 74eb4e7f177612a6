#include <doctest.h>

#include "branchsim/control.hpp"
#include "test_support.hpp"

using namespace branchsim;

namespace {
Eigen::VectorXd vec1(double x) {
    Eigen::VectorXd v(1);
    v << x;
    return v;
}
}  // namespace

TEST_SUITE("control") {

TEST_CASE("constant policy and perturbation") {
    ControlPolicy p = constant_policy(vec1(0.75));
    Configuration cfg = random_admissible_population(1, 1, 3);
    Eigen::VectorXd a = evaluate_policy(p, 0.3, cfg.atom(0).label, cfg);
    CHECK(a[0] == 0.75);
    ControlPolicy q = perturb_policy(p, vec1(-0.25));
    CHECK(evaluate_policy(q, 0.3, cfg.atom(0).label, cfg)[0] == 0.5);
    CHECK(q.kind == ControlPolicy::Kind::Custom);
    CHECK(q.symmetric);
    CHECK_THROWS(perturb_policy(p, Eigen::VectorXd::Zero(2)));
    CHECK_THROWS(evaluate_policy(p, 0.0, Label::parse("404"), cfg));
}

TEST_CASE("symmetry audit passes label-blind policies exactly") {
    ControlPolicy p;
    p.adim = 1;
    p.symmetric = true;
    p.act = [](double t, const Label&, const Eigen::VectorXd& x, const Configuration& cfg) {
        // uses position, time and the unlabeled features only
        return vec1(-x[0] * (1.0 + t) + 0.1 * cfg.unlabeled().mass());
    };
    SymmetryReport rep = check_symmetric(p, 77, 1);
    CHECK(rep.pass);
    CHECK(rep.worst == 0.0);
}

TEST_CASE("symmetry audit reports label-dependent policies with a witness") {
    ControlPolicy p;
    p.adim = 1;
    p.symmetric = false;
    p.act = [](double, const Label& l, const Eigen::VectorXd& x, const Configuration&) {
        return vec1(x[0] + 0.01 * static_cast<double>(l.depth()));
    };
    SymmetryReport rep = check_symmetric(p, 78, 1);
    CHECK(!rep.pass);
    CHECK(rep.worst > 0.0);
    CHECK(!rep.witness.empty());
}

}  // TEST_SUITE

