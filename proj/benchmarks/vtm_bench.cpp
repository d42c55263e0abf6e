#include <benchmark/benchmark.h>

#include <random>

#include "vtm/chipgen.hpp"
#include "vtm/network.hpp"

using namespace vtm;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = u(rng);
    return Tensor(std::move(shape), std::move(v));
}

// args: batch, channels, spatial size
void BM_Conv2dForward(benchmark::State& state)
{
    const auto b = static_cast<std::size_t>(state.range(0)), c = static_cast<std::size_t>(state.range(1)),
               s = static_cast<std::size_t>(state.range(2));
    auto x = random_tensor({b, c, s, s}, 1);
    Conv2dLayer layer{random_tensor({c, c, 3, 3}, 2), random_tensor({c}, 3), 1, 1};
    for (auto _ : state) {
        Graph g(GradMode::disabled);
        benchmark::DoNotOptimize(conv2d_forward(g, layer, g.constant(x)).value().data().data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(b));
}
BENCHMARK(BM_Conv2dForward)->Args({32, 8, 64})->Args({32, 32, 16})->Args({1, 64, 64});

void BM_Conv2dBackward(benchmark::State& state)
{
    const auto b = static_cast<std::size_t>(state.range(0)), c = static_cast<std::size_t>(state.range(1)),
               s = static_cast<std::size_t>(state.range(2));
    auto x = random_tensor({b, c, s, s}, 1);
    Conv2dLayer layer{random_tensor({c, c, 3, 3}, 2), random_tensor({c}, 3), 1, 1};
    for (auto _ : state) {
        Graph g;
        auto y = conv2d_forward(g, layer, g.parameter(x));
        auto grads = g.backward(sum(y), KeepGrads::parameters_only);
        benchmark::DoNotOptimize(grads.of(layer.weights).data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(b));
}
BENCHMARK(BM_Conv2dBackward)->Args({32, 8, 64})->Args({32, 32, 16});

void BM_Matmul(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    auto a = random_tensor({n, n}, 4), b = random_tensor({n, n}, 5);
    for (auto _ : state) {
        Graph g(GradMode::disabled);
        benchmark::DoNotOptimize(matmul(g.constant(a), g.constant(b)).value().data().data());
    }
}
BENCHMARK(BM_Matmul)->RangeMultiplier(4)->Range(16, 256);

void BM_TrainStepTiny(benchmark::State& state)
{
    auto model = build_model(VtmConfig::tiny());
    auto chips = random_tensor({32, 3, 64, 64}, 6);
    std::vector<double> bow(32 * 9, 0.0);
    std::vector<int> labels(32);
    for (std::size_t i = 0; i < 32; ++i) {
        bow[i * 9 + i % 9] = 1;
        bow[i * 9 + (i + 4) % 9] = 1;
        labels[i] = static_cast<int>(i % 2);
    }
    Tensor bows({32, 9}, bow);
    auto params = model.parameters();
    for (auto _ : state) {
        Graph g;
        auto loss = batch_loss(g, model, g.constant(chips), g.constant(bows), labels);
        auto grads = g.backward(loss, KeepGrads::parameters_only);
        sgd_step(params, grads, 0.0);
    }
    state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_TrainStepTiny)->Unit(benchmark::kMillisecond);

void BM_RenderChip(benchmark::State& state)
{
    std::uint64_t seed = 0;
    for (auto _ : state) {
        auto chip = render_chip({{VehicleType::truck, Color::yellow}, seed++, 64});
        benchmark::DoNotOptimize(chip.pixels.data());
    }
}
BENCHMARK(BM_RenderChip);

}  // namespace

BENCHMARK_MAIN();
