#include "doctest_torch.hpp"

#include "singanseg/errors.hpp"
#include "singanseg/networks.hpp"
#include "singanseg/pyramid.hpp"

using namespace singanseg;

namespace {

bool stacks_equal(const ModelStack& a, const ModelStack& b) {
    for (std::size_t i = 0; i < a.generators.size(); ++i) {
        auto pa = a.generators[i]->parameters();
        auto pb = b.generators[i]->parameters();
        for (std::size_t j = 0; j < pa.size(); ++j) {
            if (!pa[j].equal(pb[j])) return false;
        }
    }
    return a.noise.zstar.equal(b.noise.zstar);
}

}  // namespace

TEST_CASE("init_stack is deterministic and sized to the schedule") {
    auto schedule = compute_scale_schedule(250, 250);
    REQUIRE(schedule.num_scales() == 9);
    auto s1 = init_stack(schedule, 32, 7);
    auto s2 = init_stack(schedule, 32, 7);
    CHECK(s1.generators.size() == 9);
    CHECK(s1.discriminators.size() == 9);
    CHECK(stacks_equal(s1, s2));

    auto s3 = init_stack(schedule, 32, 8);
    CHECK_FALSE(stacks_equal(s1, s3));

    CHECK(s1.noise.sigmas.size() == 9);
    CHECK(s1.noise.sigmas[0] == doctest::Approx(1.0));
    CHECK(s1.noise.zstar.sizes() ==
          torch::IntArrayRef({4, schedule.coarsest().first, schedule.coarsest().second}));
    CHECK(s1.parameter_count() > 0);
}

TEST_CASE("width doubles every 4 scales, capped at 128") {
    std::vector<int> expect{32, 32, 32, 32, 64, 64, 64, 64, 128};
    for (int i = 0; i < 9; ++i) CHECK(scale_width(32, i) == expect[static_cast<std::size_t>(i)]);
    CHECK(scale_width(32, 12) == 128);  // cap

    auto schedule = compute_scale_schedule(250, 250);
    auto stack = init_stack(schedule, 32, 0);
    for (int i = 0; i < 9; ++i) {
        CHECK(stack.generators[static_cast<std::size_t>(i)]->width == expect[static_cast<std::size_t>(i)]);
    }
}

TEST_CASE("generator_forward is fully convolutional and bounded") {
    torch::manual_seed(3);
    auto schedule = compute_scale_schedule(64, 64);
    auto stack = init_stack(schedule, 32, 3);
    auto& gen = stack.generators[0];

    for (auto [h, w] : std::vector<std::pair<std::int64_t, std::int64_t>>{{25, 25}, {33, 47}}) {
        auto noise = torch::randn({4, h, w});
        auto prev = torch::zeros({4, h, w});
        auto out = generator_forward(gen, noise, prev, 1.0);
        CHECK(out.sizes() == torch::IntArrayRef({4, h, w}));
        CHECK(out.max().item<double>() <= 1.0);
        CHECK(out.min().item<double>() >= -1.0);
    }

    // coarsest scale with zero noise and zero prev is deterministic
    auto o1 = generator_forward(gen, torch::zeros({4, 25, 25}), torch::zeros({4, 25, 25}), 1.0);
    auto o2 = generator_forward(gen, torch::zeros({4, 25, 25}), torch::zeros({4, 25, 25}), 1.0);
    CHECK(o1.equal(o2));

    CHECK_THROWS_AS(
        generator_forward(gen, torch::zeros({4, 25, 25}), torch::zeros({4, 25, 24}), 1.0),
        DataError);
}

TEST_CASE("discriminator produces a finite patch score map") {
    torch::manual_seed(4);
    auto schedule = compute_scale_schedule(64, 64);
    auto stack = init_stack(schedule, 32, 4);
    auto& disc = stack.discriminators[0];

    auto map = discriminator_forward(disc, torch::rand({4, 25, 25}) * 2 - 1);
    CHECK(map.size(0) == 1);
    CHECK(map.size(1) > 0);
    CHECK(map.size(2) > 0);
    CHECK(torch::isfinite(map).all().item<bool>());

    auto m1 = discriminator_forward(disc, torch::rand({4, 25, 25}) * 2 - 1).mean();
    auto m2 = discriminator_forward(disc, torch::rand({4, 25, 25}) * 2 - 1).mean();
    CHECK(m1.item<double>() != m2.item<double>());

    auto flat = discriminator_forward(disc, torch::zeros({4, 25, 25}));
    CHECK(torch::isfinite(flat).all().item<bool>());

    CHECK_THROWS_AS(discriminator_forward(disc, torch::zeros({4, 8, 8})), DataError);
}

TEST_CASE("norm kind round trip") {
    CHECK(norm_kind_from_string("batch") == NormKind::Batch);
    CHECK(norm_kind_from_string("instance") == NormKind::Instance);
    CHECK(norm_kind_from_string("none") == NormKind::None);
    CHECK(to_string(NormKind::Batch) == "batch");
    CHECK_THROWS_AS(norm_kind_from_string("spectral"), ConfigError);
}
