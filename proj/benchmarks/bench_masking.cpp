// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "seggroup/encoder.hpp"
#include "seggroup/grouping.hpp"
#include "seggroup/pipeline.hpp"
#include "seggroup/synthetic.hpp"

namespace {

using namespace seggroup;

struct Fixture {
  Encoders encoders = build_encoders(EncoderConfig{});
  Image image;
  RegionMaskSet masks;

  explicit Fixture(int regions) {
    SyntheticOptions opts;
    opts.image_size = 224;
    image = image_from_raster(render_sample(0, opts).image);
    GroupingSettings settings;
    settings.per_image = true;
    settings.num_regions = regions;
    settings.upsample = UpsampleMode::replicate;
    masks = group_image(encoders.vision, image, Preprocessing{}, settings, nullptr).masks;
  }
};

void BM_EncodeRegions(benchmark::State& state) {
  static Fixture fixture(8);
  const auto strategy = static_cast<MaskingStrategy>(state.range(0));
  for (auto _ : state) {
    auto out = fixture.encoders.vision.encode_regions(fixture.image, fixture.masks, strategy, nullptr);
    benchmark::DoNotOptimize(out.embeddings.data());
  }
  state.SetLabel(strategy_name(strategy));
}
BENCHMARK(BM_EncodeRegions)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

void BM_PatchStream(benchmark::State& state) {
  static Fixture fixture(8);
  for (auto _ : state) benchmark::DoNotOptimize(fixture.encoders.vision.encode_patches(fixture.image).features.data());
}
BENCHMARK(BM_PatchStream)->Unit(benchmark::kMillisecond);

void BM_KMeans(benchmark::State& state) {
  static Fixture fixture(8);
  const auto features = patch_features(fixture.encoders.vision, fixture.image);
  for (auto _ : state) {
    auto r = kmeans(features.features, static_cast<int>(state.range(0)), Metric::cosine, 0);
    benchmark::DoNotOptimize(r.labels.data());
  }
}
BENCHMARK(BM_KMeans)->Arg(8)->Arg(27)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
