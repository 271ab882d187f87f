#pragma once

// Synthetic multi-label dataset generation and persistence.
//
// Labels come from a sequential Bernoulli pass (base rate kappa/num_classes,
// multiplied by (1 + boost) per already-active co-occurrence partner, clamped
// to [0,1]). Each class owns a fixed rectangular tile of the grid (row-major
// partition); active classes add their seed-drawn signature pattern, scaled
// by alpha, into their tile, and Gaussian noise at level `noise` covers the
// whole grid. Generation is a pure function of the spec.

#include <cstdint>
#include <string>
#include <vector>

#include "labelcl/config.hpp"
#include "labelcl/error.hpp"
#include "labelcl/rng.hpp"
#include "labelcl/tensor.hpp"

namespace labelcl {

struct Sample {
    int64_t id = 0;                // position in file order (train split first)
    Tensor<double> grid;           // (H0, W0, c_raw)
    std::vector<uint8_t> labels;   // length num_classes, entries 0/1
};

struct Dataset {
    SyntheticSpec spec;
    std::vector<Sample> train;
    std::vector<Sample> test;
};

struct TileRect {
    int r0 = 0, r1 = 0, c0 = 0, c1 = 0; // rows [r0,r1) x cols [c0,c1)
};

// Row-major tile partition: R = largest divisor of num_classes with
// R <= floor(sqrt(num_classes)), C = num_classes / R; class j gets row band
// j / C and column band j % C (integer band splits of the grid).
TileRect class_tile(const SyntheticSpec& spec, int cls);

// Per-class signature patterns, drawn once from the spec seed (tile_h x
// tile_w x c_raw standard normal draws per class, in class order).
std::vector<Tensor<double>> class_signatures(const SyntheticSpec& spec);

Dataset generate(const SyntheticSpec& spec);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

// Index order for one epoch: deterministic shuffle (Fisher-Yates over the
// seeded generator) split into consecutive batches; the final partial batch
// is kept. shuffle=false yields the original order.
std::vector<std::vector<int64_t>> batch_order(int64_t count, int64_t batch_size,
                                              uint64_t shuffle_seed, bool shuffle);

uint64_t fnv1a64(const void* data, size_t bytes);

} // namespace labelcl
