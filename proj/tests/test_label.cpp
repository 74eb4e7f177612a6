#include <doctest.h>

#include <algorithm>
#include <vector>

#include "branchsim/label.hpp"
#include "branchsim/rng.hpp"

using namespace branchsim;

TEST_SUITE("label") {

TEST_CASE("children, concatenation and prefix order") {
    Label root = Label::root();
    Label a = root.child(2);            // (2)
    Label b = a.child(0);               // (2,0)
    CHECK(a.str() == "2");
    CHECK(b.str() == "2.0");
    CHECK(root.is_ancestor_of(a));
    CHECK(a.is_ancestor_of(b));
    CHECK(a.is_strict_ancestor_of(b));
    CHECK(!b.is_ancestor_of(a));
    CHECK(!a.is_strict_ancestor_of(a));
    CHECK(a.concat(Label::parse("0")) == b);
    CHECK(b.suffix_from(1) == Label::parse("0"));
    // siblings are not related
    CHECK(!Label::parse("2.0").is_ancestor_of(Label::parse("2.1")));
}

TEST_CASE("tree distance: worked values") {
    // distance climbs to the longest common prefix, paying digit+1 per edge
    CHECK(Label::distance(Label::parse("0"), Label::parse("1")) == 3);     // (0+1)+(1+1)
    CHECK(Label::distance(Label::parse("0.1"), Label::root()) == 3);       // (0+1)+(1+1)
    CHECK(Label::distance(Label::parse("2"), Label::parse("2")) == 0);
    CHECK(Label::distance(Label::parse("2"), Label::parse("2.0")) == 1);
    CHECK(Label::distance(Label::parse("2.3"), Label::parse("2.1")) == 6); // (3+1)+(1+1)
    CHECK(Label::parse("0.1").norm() == 3);
    CHECK(Label::root().norm() == 0);
}

TEST_CASE("tree distance is a metric on random labels") {
    // symmetry, identity, triangle inequality over random triples
    NoiseKey key(99, Label::root());
    auto rand_label = [&](std::uint64_t c) {
        std::uint64_t bits = noise_bits(key, NoiseStream::Mark, c);
        std::size_t depth = bits % 4;
        std::vector<std::uint32_t> d;
        for (std::size_t l = 0; l < depth; ++l) d.push_back(static_cast<std::uint32_t>((bits >> (8 * l + 8)) % 3));
        return Label(std::move(d));
    };
    for (std::uint64_t t = 0; t < 300; ++t) {
        Label x = rand_label(3 * t), y = rand_label(3 * t + 1), z = rand_label(3 * t + 2);
        CHECK(Label::distance(x, y) == Label::distance(y, x));
        CHECK(Label::distance(x, x) == 0);
        if (!(x == y)) CHECK(Label::distance(x, y) > 0);
        CHECK(Label::distance(x, z) <= Label::distance(x, y) + Label::distance(y, z));
    }
}

TEST_CASE("total order: ancestors first, then first differing index") {
    CHECK(Label::cmp(Label::root(), Label::parse("0")) < 0);
    CHECK(Label::cmp(Label::parse("2"), Label::parse("2.0")) < 0);
    CHECK(Label::cmp(Label::parse("0.5"), Label::parse("1")) < 0);
    CHECK(Label::cmp(Label::parse("1"), Label::parse("0.5")) > 0);
    CHECK(Label::cmp(Label::parse("1.2"), Label::parse("1.2")) == 0);
    std::vector<Label> v = {Label::parse("1"), Label::parse("0.2"), Label::root(), Label::parse("0")};
    std::sort(v.begin(), v.end());
    CHECK(v[0] == Label::root());
    CHECK(v[1] == Label::parse("0"));
    CHECK(v[2] == Label::parse("0.2"));
    CHECK(v[3] == Label::parse("1"));
}

TEST_CASE("order is consistent with the tree: comparisons are transitive") {
    std::vector<Label> all = {Label::root()};
    for (std::uint32_t i = 0; i < 3; ++i) {
        Label gen1 = Label::root().child(i);
        all.push_back(gen1);
        for (std::uint32_t j = 0; j < 3; ++j) all.push_back(gen1.child(j));
    }
    for (const auto& x : all)
        for (const auto& y : all)
            for (const auto& z : all)
                if (Label::cmp(x, y) <= 0 && Label::cmp(y, z) <= 0) CHECK(Label::cmp(x, z) <= 0);
}

TEST_CASE("string round-trip and rejection") {
    for (const char* s : {"", "0", "10.2.3", "7"}) {
        CHECK(Label::parse(s).str() == s);
    }
    CHECK_THROWS(Label::parse("a"));
    CHECK_THROWS(Label::parse("1..2"));
    CHECK_THROWS(Label::parse("."));
    CHECK_THROWS(Label::parse("1.-2"));
}

TEST_CASE("admissibility of label sets") {
    auto L = [](const char* s) { return Label::parse(s); };
    std::vector<Label> ok = {L("0"), L("1.0"), L("1.1"), L("2")};
    CHECK(is_admissible(ok));
    std::vector<Label> dup = {L("0"), L("0")};
    CHECK(!is_admissible(dup));
    std::vector<Label> nested = {L("1"), L("1.0")};
    CHECK(!is_admissible(nested));
    std::vector<Label> nested_deep = {L("1.0.2"), L("0"), L("1.0")};
    CHECK(!is_admissible(nested_deep));
    std::vector<Label> root_only = {Label::root()};
    CHECK(is_admissible(root_only));
    std::vector<Label> root_and_child = {Label::root(), L("0")};
    CHECK(!is_admissible(root_and_child));
    CHECK(is_admissible(std::vector<Label>{}));
}

}  // TEST_SUITE

