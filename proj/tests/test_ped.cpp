#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "test_support.hpp"

using namespace pamm;

namespace {

SurvivalRecord subject(std::string id, double time, bool event) {
    SurvivalRecord r;
    r.id = std::move(id);
    r.time = time;
    r.event = event;
    r.group = "g";
    return r;
}

SurvivalData dataset(std::vector<SurvivalRecord> recs) {
    SurvivalData d;
    d.schema.group_levels = {"g"};
    d.records = std::move(recs);
    return d;
}

} // namespace

TEST(CutPoints, UniqueTimes) {
    const auto d = dataset({subject("1", 5, true), subject("2", 3, false), subject("3", 5, true), subject("4", 2, true)});
    EXPECT_EQ(make_cut_points(d.records, UniqueTimes{}).kappas(), (std::vector<double>{0, 2, 3, 5}));
}

TEST(CutPoints, Equidistant) {
    const auto d = dataset({subject("1", 1, true), subject("2", 2, true)});
    EXPECT_EQ(make_cut_points(d.records, EquidistantCuts{4}).kappas(), (std::vector<double>{0, 0.5, 1, 1.5, 2}));
}

TEST(CutPoints, ExplicitShortOfMaxTimeIsError) {
    const auto d = dataset({subject("1", 5, true)});
    EXPECT_THROW(make_cut_points(d.records, ExplicitCuts{{0, 2, 4}}), InputError);
}

TEST(CutPoints, ExplicitGetsLeadingZero) {
    const auto d = dataset({subject("1", 3, true)});
    EXPECT_EQ(make_cut_points(d.records, ExplicitCuts{{1, 4}}).kappas(), (std::vector<double>{0, 1, 4}));
}

TEST(CutPoints, RejectsBadSequences) {
    EXPECT_THROW(CutPoints({0, 2, 2}), InputError);
    EXPECT_THROW(CutPoints({1, 2}), InputError);
    EXPECT_THROW(CutPoints({0}), InputError);
    const auto d = dataset({subject("1", 3, true)});
    EXPECT_THROW(make_cut_points(d.records, ExplicitCuts{{0, 4, 3}}), InputError);
    EXPECT_THROW(make_cut_points({}, UniqueTimes{}), InputError);
}

TEST(AsPed, EventSubjectEndConvention) {
    const auto ped = as_ped(dataset({subject("1", 5, true)}), CutPoints({0, 2, 5}), TimeConvention::End);
    ASSERT_EQ(ped.rows.size(), 2u);
    EXPECT_EQ(ped.rows[0].interval, 1u);
    EXPECT_EQ(ped.rows[0].exposure, 2.0);
    EXPECT_EQ(ped.rows[0].offset, std::log(2.0));
    EXPECT_EQ(ped.rows[0].delta, 0);
    EXPECT_EQ(ped.rows[0].t_rep, 2.0);
    EXPECT_EQ(ped.rows[1].interval, 2u);
    EXPECT_EQ(ped.rows[1].exposure, 3.0);
    EXPECT_EQ(ped.rows[1].offset, std::log(3.0));
    EXPECT_EQ(ped.rows[1].delta, 1);
    EXPECT_EQ(ped.rows[1].t_rep, 5.0);
}

TEST(AsPed, CensoredSubjectPartialLastInterval) {
    const auto ped = as_ped(dataset({subject("1", 3, false)}), CutPoints({0, 2, 5}), TimeConvention::End);
    ASSERT_EQ(ped.rows.size(), 2u);
    EXPECT_EQ(ped.rows[0].exposure, 2.0);
    EXPECT_EQ(ped.rows[0].delta, 0);
    EXPECT_EQ(ped.rows[1].exposure, 1.0);
    EXPECT_EQ(ped.rows[1].delta, 0);
    EXPECT_EQ(ped.rows[1].t_rep, 5.0);
}

TEST(AsPed, EventOnCutPointMidConvention) {
    const auto ped = as_ped(dataset({subject("1", 2, true)}), CutPoints({0, 2, 5}), TimeConvention::Mid);
    ASSERT_EQ(ped.rows.size(), 1u);
    EXPECT_EQ(ped.rows[0].interval, 1u);
    EXPECT_EQ(ped.rows[0].exposure, 2.0);
    EXPECT_EQ(ped.rows[0].delta, 1);
    EXPECT_EQ(ped.rows[0].t_rep, 1.0);
}

TEST(AsPed, RejectsOutOfRangeTimes) {
    EXPECT_THROW(as_ped(dataset({subject("1", 0, true)}), CutPoints({0, 2}), TimeConvention::End), InputError);
    EXPECT_THROW(as_ped(dataset({subject("1", 3, true)}), CutPoints({0, 2}), TimeConvention::End), InputError);
}

TEST(AsPed, InvariantsOnRandomData) {
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 20; ++rep) {
        const auto data = test::random_survival(rng, 40);
        for (const CutStrategy& strat : {CutStrategy{UniqueTimes{}}, CutStrategy{EquidistantCuts{7}}}) {
            const auto cuts = make_cut_points(data.records, strat);
            const auto end = as_ped(data, cuts, TimeConvention::End);
            const auto mid = as_ped(data, cuts, TimeConvention::Mid);
            double exposure = 0.0, time = 0.0;
            int deltas = 0, events = 0;
            std::map<std::string, std::size_t> last_interval;
            for (const auto& r : end.rows) {
                exposure += r.exposure;
                deltas += r.delta;
                EXPECT_GT(r.exposure, 0.0);
                EXPECT_EQ(r.offset, std::log(r.exposure));
                EXPECT_EQ(r.interval, last_interval[r.id] + 1); // contiguous prefix
                last_interval[r.id] = r.interval;
            }
            for (const auto& s : data.records) {
                time += std::min(s.time, cuts.horizon());
                events += s.event ? 1 : 0;
            }
            EXPECT_NEAR(exposure, time, 1e-9 * time);
            EXPECT_EQ(deltas, events);

            // the convention changes t_rep only
            ASSERT_EQ(end.rows.size(), mid.rows.size());
            for (std::size_t k = 0; k < end.rows.size(); ++k) {
                EXPECT_EQ(end.rows[k].exposure, mid.rows[k].exposure);
                EXPECT_EQ(end.rows[k].offset, mid.rows[k].offset);
                EXPECT_EQ(end.rows[k].delta, mid.rows[k].delta);
                EXPECT_EQ(end.rows[k].t_rep, end.rows[k].t_end);
                EXPECT_EQ(mid.rows[k].t_rep, 0.5 * (mid.rows[k].t_start + mid.rows[k].t_end));
            }

            // lossless: subjects come back exactly
            const auto back = reconstruct_subjects(end);
            ASSERT_EQ(back.size(), data.records.size());
            for (std::size_t i = 0; i < back.size(); ++i) {
                EXPECT_EQ(back[i].id, data.records[i].id);
                EXPECT_NEAR(back[i].time, data.records[i].time, 1e-12 * data.records[i].time);
                EXPECT_EQ(back[i].event, data.records[i].event);
            }
        }
    }
}

TEST(PedCsv, RoundTripFullPrecision) {
    std::mt19937_64 rng(5);
    const auto data = test::random_survival(rng, 15);
    const auto ped = as_ped(data, make_cut_points(data.records, EquidistantCuts{5}), TimeConvention::Mid);
    std::stringstream ss;
    write_ped_csv(ss, ped);
    std::string header;
    std::getline(std::stringstream(ss.str()), header);
    EXPECT_EQ(header, "id,interval,t_start,t_end,t_rep,exposure,offset,delta,x1,x2,f,group");
    const auto back = read_ped_csv(ss, {"f"});
    ASSERT_EQ(back.rows.size(), ped.rows.size());
    EXPECT_EQ(back.cuts, ped.cuts);
    EXPECT_EQ(back.convention, TimeConvention::Mid);
    EXPECT_TRUE(back.schema == ped.schema);
    for (std::size_t k = 0; k < ped.rows.size(); ++k) {
        EXPECT_EQ(back.rows[k].exposure, ped.rows[k].exposure);
        EXPECT_EQ(back.rows[k].offset, ped.rows[k].offset);
        EXPECT_EQ(back.rows[k].covariates, ped.rows[k].covariates);
        EXPECT_EQ(back.rows[k].factors, ped.rows[k].factors);
        EXPECT_EQ(back.rows[k].delta, ped.rows[k].delta);
    }
}

TEST(PedCsv, RejectsMalformedInput) {
    std::stringstream bad_header("id,interval,start\n");
    EXPECT_THROW(read_ped_csv(bad_header), InputError);
    std::stringstream bad_delta("id,interval,t_start,t_end,t_rep,exposure,offset,delta,group\n1,1,0,1,1,1,0,2,a\n");
    EXPECT_THROW(read_ped_csv(bad_delta), InputError);
    std::stringstream gap("id,interval,t_start,t_end,t_rep,exposure,offset,delta,group\n1,2,1,2,2,1,0,1,a\n");
    EXPECT_THROW(read_ped_csv(gap), InputError);
}

TEST(Survival, ValidateCatchesMisalignedRecords) {
    SurvivalData d;
    d.schema.covariates = {"x"};
    d.schema.group_levels = {"g"};
    auto r = subject("1", 1, true);
    d.records = {r};
    EXPECT_THROW(d.validate(), InputError);
    d.records[0].covariates = {std::nan("")};
    EXPECT_THROW(d.validate(), InputError);
    d.records[0].covariates = {1.0};
    d.records[0].group = "h";
    EXPECT_THROW(d.validate(), InputError);
    d.records[0].group = "g";
    EXPECT_NO_THROW(d.validate());
}
