#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mga/errors.hpp"
#include "mga/timeline.hpp"

using namespace mga;
using namespace mga::timeline;

namespace {

cohort::ModalityRecord rec(const std::string& stay, int mod, double offset,
                           std::vector<double> f = {1.0}) {
    cohort::ModalityRecord r;
    r.stay_id = stay;
    r.modality = mod;
    r.offset_minutes = offset;
    r.features = std::move(f);
    return r;
}

cohort::StayLabels labels() {
    cohort::StayLabels l;
    l.mortality = 1;
    l.phenotypes.assign(25, 0);
    l.los_hours = 48.0;
    return l;
}

}  // namespace

TEST_CASE("one event yields a two-position sequence") {
    auto tl = assemble({rec("s1", 0, 5.0)}, labels());
    CHECK(tl.events.size() == 1);
    CHECK(tl.sequence_length() == 2);
}

TEST_CASE("events sort by offset") {
    auto tl = assemble({rec("s1", 0, 5.0), rec("s1", 1, 3.0)}, labels());
    REQUIRE(tl.events.size() == 2);
    CHECK(tl.events[0].offset_minutes == 3.0);
    CHECK(tl.events[0].modality == 1);
    CHECK(tl.events[1].offset_minutes == 5.0);
}

TEST_CASE("equal offsets break ties by modality order, deterministically") {
    std::vector<cohort::ModalityRecord> records = {rec("s1", 2, 7.0), rec("s1", 0, 7.0),
                                                   rec("s1", 1, 7.0)};
    auto first = assemble(records, labels());
    for (int run = 0; run < 5; ++run) {
        auto again = assemble(records, labels());
        REQUIRE(again.events.size() == first.events.size());
        for (std::size_t i = 0; i < first.events.size(); ++i) {
            CHECK(again.events[i].modality == first.events[i].modality);
            CHECK(again.events[i].uid == first.events[i].uid);
        }
    }
    CHECK(first.events[0].modality == 0);
    CHECK(first.events[1].modality == 1);
    CHECK(first.events[2].modality == 2);
}

TEST_CASE("zero events is rejected") {
    cohort::ModalityRecord absent;
    absent.stay_id = "s1";
    absent.modality = 0;
    absent.absent = true;
    CHECK_THROWS_AS(assemble({absent}, labels()), DataError);
}

TEST_CASE("features are sign-log scaled at assembly") {
    auto tl = assemble({rec("s1", 0, 0.0, {std::exp(1.0) - 1.0, 0.0})}, labels());
    CHECK(tl.events[0].features[0] == doctest::Approx(1.0));
    CHECK(tl.events[0].features[1] == 0.0);
}

TEST_CASE("long stays truncate from the front keeping recent events") {
    std::vector<cohort::ModalityRecord> records;
    for (int i = 0; i < 80; ++i) records.push_back(rec("s1", 0, static_cast<double>(i)));
    auto tl = assemble(records, labels());
    CHECK(tl.events.size() == kMaxEvents);
    CHECK(tl.events.front().offset_minutes == 16.0);  // 80 - 64
    CHECK(tl.events.back().offset_minutes == 79.0);
}

TEST_CASE("ablating an absent modality is a no-op") {
    auto tl = assemble({rec("s1", 0, 1.0), rec("s1", 1, 2.0)}, labels());
    auto ab = ablate_modality(tl, 5);
    REQUIRE(ab.events.size() == tl.events.size());
    for (std::size_t i = 0; i < tl.events.size(); ++i) {
        CHECK(ab.events[i].uid == tl.events[i].uid);
        CHECK(ab.events[i].offset_minutes == tl.events[i].offset_minutes);
    }
}

TEST_CASE("ablation removes events and their paired slots") {
    std::vector<cohort::ModalityRecord> records = {rec("s1", 0, 1.0), rec("s1", 1, 2.0),
                                                   rec("s1", 0, 3.0), rec("s1", 1, 4.0)};
    auto tl = assemble(records, labels());
    CHECK(tl.sequence_length() == 8);
    auto ab = ablate_modality(tl, 0);
    CHECK(ab.sequence_length() == 4);
    for (const auto& e : ab.events) CHECK(e.modality == 1);
}

TEST_CASE("ablation is idempotent") {
    auto tl = assemble({rec("s1", 0, 1.0), rec("s1", 1, 2.0), rec("s1", 0, 3.0)}, labels());
    auto once = ablate_modality(tl, 0);
    auto twice = ablate_modality(once, 0);
    REQUIRE(once.events.size() == twice.events.size());
    for (std::size_t i = 0; i < once.events.size(); ++i)
        CHECK(once.events[i].uid == twice.events[i].uid);
}

TEST_CASE("ablating the only modality is an error") {
    auto tl = assemble({rec("s1", 0, 1.0)}, labels());
    CHECK_THROWS_AS(ablate_modality(tl, 0), DataError);
}

TEST_CASE("survivors keep their original relative order (subsequence property)") {
    Rng rng(3);
    std::vector<cohort::ModalityRecord> records;
    for (int i = 0; i < 30; ++i)
        records.push_back(rec("s1", rng.uniform_int(3), rng.uniform(0.0, 500.0)));
    auto tl = assemble(records, labels());
    auto ab = ablate_modality(tl, 1);
    // uids of survivors appear in the same order as in the original
    std::size_t cursor = 0;
    for (const auto& e : tl.events) {
        if (cursor < ab.events.size() && ab.events[cursor].uid == e.uid) ++cursor;
    }
    CHECK(cursor == ab.events.size());
}

TEST_CASE("assemble is pure: same records give identical timelines") {
    Rng rng(4);
    std::vector<cohort::ModalityRecord> records;
    for (int i = 0; i < 12; ++i)
        records.push_back(
            rec("s1", rng.uniform_int(2), rng.uniform(0.0, 100.0), {rng.normal(), rng.normal()}));
    auto a = assemble(records, labels());
    auto b = assemble(records, labels());
    REQUIRE(a.events.size() == b.events.size());
    for (std::size_t i = 0; i < a.events.size(); ++i) {
        CHECK(a.events[i].offset_minutes == b.events[i].offset_minutes);
        CHECK(a.events[i].features == b.events[i].features);
        CHECK(a.events[i].uid == b.events[i].uid);
    }
}

TEST_CASE("static modalities land at offset zero ahead of dynamic events") {
    auto cfg = cohort::mimic_like_config(40, 9);
    auto c = cohort::generate(cfg);
    auto stays = [&] {
        std::vector<std::string> s;
        for (const auto& [stay, l] : c.labels) s.push_back(stay);
        return s;
    }();
    auto tls = build_timelines(c.records, c.labels, stays);
    for (const auto& tl : tls) {
        for (std::size_t i = 0; i < tl.events.size(); ++i) {
            if (cfg.modalities[static_cast<std::size_t>(tl.events[i].modality)].is_static)
                CHECK(tl.events[i].offset_minutes == 0.0);
            if (i > 0) CHECK(tl.events[i].offset_minutes >= tl.events[i - 1].offset_minutes);
        }
    }
}
