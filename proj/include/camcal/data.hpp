#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "camcal/tensor.hpp"

namespace camcal {

using real = float;

enum class Split { many, medium, low };

const char* split_name(Split s);

// Class-count cutoffs: many iff N > many_gt, low iff N < low_lt,
// medium in between.
struct SplitThresholds {
    int many_gt = 100;
    int low_lt = 20;
};

Split split_for_count(int count, const SplitThresholds& t);

// Labeled image collection with per-class bookkeeping. Images are flat
// [C*H*W] buffers with values in [0,1]. A dataset may also be a bare count
// profile (no pixels) when only the distribution matters.
struct LongTailedDataset {
    int num_classes = 0;
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<std::vector<real>> images;
    std::vector<int> labels;
    std::vector<int> class_counts;
    std::vector<std::vector<int>> class_items;  // item indices per class
    std::vector<Split> split_of;
    SplitThresholds thresholds;

    size_t size() const { return images.size(); }
    int64_t image_numel() const { return static_cast<int64_t>(channels) * height * width; }
    double imbalance_ratio() const;

    // Recomputes class_items/split_of from labels; checks count bookkeeping.
    void rebuild_index();
};

// Exponential long-tailed count profile: n_i = round(base * rho^(-i/(N-1))),
// with the last class pinned to the nearest integer of base/rho and every
// count clamped to at least 1.
std::vector<int> longtail_counts(int base_per_class, int num_classes, double rho);

// Count-profile-only dataset (no pixels); pairs with a concrete source.
LongTailedDataset make_longtailed(int base_per_class, int num_classes, double rho,
                                  uint64_t seed, SplitThresholds thresholds = {});

// ---- CIFAR binary ingestion ---------------------------------------------

enum class CifarVariant { cifar10, cifar100 };

struct LabeledImages {
    int channels = 3;
    int height = 32;
    int width = 32;
    std::vector<std::vector<real>> images;
    std::vector<int> labels;
};

// CIFAR-10 records are 3073 bytes (label + 1024 R + 1024 G + 1024 B);
// CIFAR-100 records are 3074 bytes (coarse label, fine label, pixels).
// Pixels are scaled to [0,1] by division by 255.
LabeledImages load_cifar_binary(const std::string& path, CifarVariant variant);
LabeledImages decode_cifar_bytes(const std::vector<uint8_t>& bytes, CifarVariant variant);

// Inverse of the decoder, used to synthesize fixture files and to check
// byte-exact round trips. `coarse_label` is ignored for CIFAR-10.
void append_cifar_record(std::vector<uint8_t>& out, CifarVariant variant, int label,
                         const std::vector<real>& image, int coarse_label = 0);

// Keeps counts[i] images of source class perm[i] (first in file order),
// where perm is a seeded shuffle of the class indices.
LongTailedDataset truncate_longtailed(const LabeledImages& source, int num_classes,
                                      const std::vector<int>& counts, uint64_t seed,
                                      SplitThresholds thresholds = {});

// ---- synthetic shapes -----------------------------------------------------

int synth_pattern_count();
std::string synth_pattern_name(int class_index);

// Single-channel procedural patterns at random position/scale over a noisy
// cluttered background. Pixels are a pure function of (seed, class, index).
LongTailedDataset synth_shapes(int num_classes, const std::vector<int>& counts,
                               int image_size, uint64_t seed,
                               SplitThresholds thresholds = {});

struct DatasetBundle {
    LongTailedDataset train;
    LongTailedDataset test;
};

// Long-tailed train split plus a balanced test split from a disjoint stream.
DatasetBundle make_synth_bundle(int num_classes, const std::vector<int>& counts,
                                int test_per_class, int image_size, uint64_t seed,
                                SplitThresholds thresholds = {});

// ---- sampling -------------------------------------------------------------

enum class SamplerKind { instance_balanced, class_balanced };

struct SamplerSpec {
    SamplerKind kind = SamplerKind::instance_balanced;
    uint64_t seed = 0;
    int batch_size = 1;
};

// Draws are i.i.d. with replacement: instance_balanced picks uniformly over
// items, class_balanced picks a class uniformly then an item within it.
class Sampler {
public:
    Sampler(const LongTailedDataset& dataset, SamplerSpec spec);
    std::vector<int> next_batch();

private:
    const LongTailedDataset& dataset_;
    SamplerSpec spec_;
    std::mt19937_64 rng_;
};

// ---- dataset directory I/O -------------------------------------------------

// Layout: manifest.json + {train,test}_{images.f32,labels.i32} raw blobs
// (little-endian float32 / int32).
struct DatasetManifestInfo {
    std::string source;
    uint64_t seed = 0;
    double rho = 1.0;
};

void save_dataset(const std::string& dir, const DatasetBundle& bundle,
                  const DatasetManifestInfo& info);
DatasetBundle load_dataset(const std::string& dir, DatasetManifestInfo* info_out = nullptr);

uint64_t mix_seed(uint64_t seed, uint64_t stream);

}  // namespace camcal
