#include "camcal/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "camcal/error.hpp"

namespace camcal {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

const char* split_name(Split s) {
    switch (s) {
        case Split::many: return "many";
        case Split::medium: return "medium";
        default: return "low";
    }
}

Split split_for_count(int count, const SplitThresholds& t) {
    if (count > t.many_gt) return Split::many;
    if (count < t.low_lt) return Split::low;
    return Split::medium;
}

double LongTailedDataset::imbalance_ratio() const {
    if (class_counts.empty()) return 1.0;
    const auto [mn, mx] = std::minmax_element(class_counts.begin(), class_counts.end());
    return static_cast<double>(*mx) / static_cast<double>(std::max(1, *mn));
}

void LongTailedDataset::rebuild_index() {
    class_counts.assign(static_cast<size_t>(num_classes), 0);
    class_items.assign(static_cast<size_t>(num_classes), {});
    for (size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i];
        if (y < 0 || y >= num_classes)
            throw std::invalid_argument("dataset: label " + std::to_string(y) +
                                        " out of range for " + std::to_string(num_classes) +
                                        " classes");
        ++class_counts[static_cast<size_t>(y)];
        class_items[static_cast<size_t>(y)].push_back(static_cast<int>(i));
    }
    split_of.resize(static_cast<size_t>(num_classes));
    for (int c = 0; c < num_classes; ++c)
        split_of[static_cast<size_t>(c)] = split_for_count(class_counts[static_cast<size_t>(c)], thresholds);
}

std::vector<int> longtail_counts(int base_per_class, int num_classes, double rho) {
    if (rho < 1.0) throw std::invalid_argument("longtail_counts: rho must be >= 1");
    if (base_per_class < 1 || num_classes < 1)
        throw std::invalid_argument("longtail_counts: base and class count must be positive");
    if (static_cast<double>(base_per_class) / rho < 1.0)
        throw std::invalid_argument("longtail_counts: base_per_class/rho must be >= 1");
    std::vector<int> counts(static_cast<size_t>(num_classes));
    counts[0] = base_per_class;
    for (int i = 1; i < num_classes; ++i) {
        const double frac = static_cast<double>(i) / static_cast<double>(num_classes - 1);
        const double raw = base_per_class * std::pow(rho, -frac);
        counts[static_cast<size_t>(i)] = std::max(1, static_cast<int>(std::floor(raw + 0.5)));
    }
    if (num_classes > 1) {
        // Pin the published endpoint: nearest integer (ties-to-even) of base/rho.
        counts[static_cast<size_t>(num_classes - 1)] =
            std::max(1, static_cast<int>(std::nearbyint(base_per_class / rho)));
    }
    for (int i = 1; i < num_classes; ++i)
        counts[static_cast<size_t>(i)] =
            std::min(counts[static_cast<size_t>(i)], counts[static_cast<size_t>(i - 1)]);
    return counts;
}

LongTailedDataset make_longtailed(int base_per_class, int num_classes, double rho,
                                  uint64_t seed, SplitThresholds thresholds) {
    (void)seed;  // profile is seed-independent; the paired source consumes the seed
    LongTailedDataset ds;
    ds.num_classes = num_classes;
    ds.thresholds = thresholds;
    ds.class_counts = longtail_counts(base_per_class, num_classes, rho);
    ds.class_items.assign(static_cast<size_t>(num_classes), {});
    ds.split_of.resize(static_cast<size_t>(num_classes));
    for (int c = 0; c < num_classes; ++c)
        ds.split_of[static_cast<size_t>(c)] =
            split_for_count(ds.class_counts[static_cast<size_t>(c)], thresholds);
    return ds;
}

// ---- CIFAR ----------------------------------------------------------------

namespace {
constexpr size_t kCifarPixels = 3 * 32 * 32;

size_t cifar_record_size(CifarVariant v) {
    return v == CifarVariant::cifar10 ? kCifarPixels + 1 : kCifarPixels + 2;
}
}  // namespace

LabeledImages decode_cifar_bytes(const std::vector<uint8_t>& bytes, CifarVariant variant) {
    const size_t record = cifar_record_size(variant);
    if (bytes.size() % record != 0)
        throw FormatError("cifar: truncated file, first incomplete record at byte offset " +
                          std::to_string((bytes.size() / record) * record) + " (record size " +
                          std::to_string(record) + ")");
    LabeledImages out;
    const size_t n = bytes.size() / record;
    out.images.reserve(n);
    out.labels.reserve(n);
    for (size_t r = 0; r < n; ++r) {
        const uint8_t* p = bytes.data() + r * record;
        int label;
        if (variant == CifarVariant::cifar10) {
            label = p[0];
            if (label >= 10)
                throw FormatError("cifar10: label byte " + std::to_string(label) +
                                  " out of range at byte offset " + std::to_string(r * record));
            p += 1;
        } else {
            const int coarse = p[0];
            label = p[1];
            if (coarse >= 20 || label >= 100)
                throw FormatError("cifar100: label bytes (" + std::to_string(coarse) + "," +
                                  std::to_string(label) + ") out of range at byte offset " +
                                  std::to_string(r * record));
            p += 2;
        }
        std::vector<real> img(kCifarPixels);
        for (size_t i = 0; i < kCifarPixels; ++i) img[i] = static_cast<real>(p[i]) / 255.0f;
        out.images.push_back(std::move(img));
        out.labels.push_back(label);
    }
    return out;
}

LabeledImages load_cifar_binary(const std::string& path, CifarVariant variant) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cifar: cannot open " + path + " (expected raw records of " +
                      std::to_string(cifar_record_size(variant)) + " bytes)");
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return decode_cifar_bytes(bytes, variant);
}

void append_cifar_record(std::vector<uint8_t>& out, CifarVariant variant, int label,
                         const std::vector<real>& image, int coarse_label) {
    if (image.size() != kCifarPixels)
        throw std::invalid_argument("append_cifar_record: image must have 3*32*32 values");
    if (variant == CifarVariant::cifar100) out.push_back(static_cast<uint8_t>(coarse_label));
    out.push_back(static_cast<uint8_t>(label));
    for (real v : image) {
        const int byte = static_cast<int>(std::lround(v * 255.0f));
        out.push_back(static_cast<uint8_t>(std::clamp(byte, 0, 255)));
    }
}

LongTailedDataset truncate_longtailed(const LabeledImages& source, int num_classes,
                                      const std::vector<int>& counts, uint64_t seed,
                                      SplitThresholds thresholds) {
    if (static_cast<int>(counts.size()) != num_classes)
        throw std::invalid_argument("truncate_longtailed: counts size mismatch");
    std::vector<std::vector<int>> by_class(static_cast<size_t>(num_classes));
    for (size_t i = 0; i < source.labels.size(); ++i) {
        const int y = source.labels[i];
        if (y < 0 || y >= num_classes)
            throw std::invalid_argument("truncate_longtailed: source label out of range");
        by_class[static_cast<size_t>(y)].push_back(static_cast<int>(i));
    }
    // Seeded permutation decides which source class receives which profile rank.
    std::vector<int> perm(static_cast<size_t>(num_classes));
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(mix_seed(seed, 0xC1A55));
    std::shuffle(perm.begin(), perm.end(), rng);

    LongTailedDataset ds;
    ds.num_classes = num_classes;
    ds.channels = source.channels;
    ds.height = source.height;
    ds.width = source.width;
    ds.thresholds = thresholds;
    for (int rank = 0; rank < num_classes; ++rank) {
        const int cls = perm[static_cast<size_t>(rank)];
        const auto& pool = by_class[static_cast<size_t>(cls)];
        const int want = counts[static_cast<size_t>(rank)];
        if (static_cast<int>(pool.size()) < want)
            throw std::invalid_argument("truncate_longtailed: class " + std::to_string(cls) +
                                        " has only " + std::to_string(pool.size()) +
                                        " images, need " + std::to_string(want));
        for (int i = 0; i < want; ++i) {
            ds.images.push_back(source.images[static_cast<size_t>(pool[static_cast<size_t>(i)])]);
            ds.labels.push_back(cls);
        }
    }
    ds.rebuild_index();
    return ds;
}

// ---- synthetic shapes -------------------------------------------------------

namespace {

struct PatternDef {
    const char* name;
};

constexpr PatternDef kPatterns[] = {
    {"h_bar"},      {"v_bar"},   {"diag_bar"},     {"disk"},
    {"ring"},       {"checker"}, {"plus"},         {"x_cross"},
    {"h_stripes"},  {"anti_diag_bar"}, {"corner_blobs"}, {"triangle"},
};

constexpr int kPatternCount = static_cast<int>(sizeof(kPatterns) / sizeof(kPatterns[0]));

bool pattern_hit(int pattern, double dx, double dy, double r, double t) {
    const double ax = std::abs(dx), ay = std::abs(dy);
    switch (pattern) {
        case 0: return ay <= t && ax <= r;
        case 1: return ax <= t && ay <= r;
        case 2: return std::abs(dx - dy) <= t * 1.414 && ax <= r && ay <= r;
        case 3: return std::hypot(dx, dy) <= 0.75 * r;
        case 4: return std::abs(std::hypot(dx, dy) - 0.85 * r) <= 0.9 * t;
        case 5: {
            if (ax > r || ay > r) return false;
            const double q = std::max(2.0, r / 1.5);
            const int cell = static_cast<int>(std::floor((dx + r) / q)) +
                             static_cast<int>(std::floor((dy + r) / q));
            return (cell & 1) == 0;
        }
        case 6: return (ax <= t || ay <= t) && std::max(ax, ay) <= r;
        case 7:
            return (std::abs(dx - dy) <= t * 1.414 || std::abs(dx + dy) <= t * 1.414) &&
                   ax <= r && ay <= r;
        case 8: {
            if (ax > r || ay > r) return false;
            const double sp = std::max(1.5, 1.2 * t);
            return (static_cast<int>(std::floor((dy + r) / sp)) & 1) == 0;
        }
        case 9: return std::abs(dx + dy) <= t * 1.414 && ax <= r && ay <= r;
        case 10: {
            const double rr = 1.4 * t;
            const double off = 0.8 * r;
            return std::hypot(ax - off, ay - off) <= rr;
        }
        default:  // triangle
            return dy >= -r && dy <= r && ax <= 0.45 * (dy + r);
    }
}

}  // namespace

int synth_pattern_count() { return kPatternCount; }

std::string synth_pattern_name(int class_index) {
    if (class_index < 0 || class_index >= kPatternCount)
        throw std::invalid_argument("synth_pattern_name: no such pattern");
    return kPatterns[class_index].name;
}

LongTailedDataset synth_shapes(int num_classes, const std::vector<int>& counts,
                               int image_size, uint64_t seed, SplitThresholds thresholds) {
    if (image_size < 16) throw std::invalid_argument("synth_shapes: image_size must be >= 16");
    if (num_classes < 1 || num_classes > kPatternCount)
        throw std::invalid_argument("synth_shapes: num_classes must be in [1," +
                                    std::to_string(kPatternCount) + "]");
    if (static_cast<int>(counts.size()) != num_classes)
        throw std::invalid_argument("synth_shapes: counts size mismatch");

    LongTailedDataset ds;
    ds.num_classes = num_classes;
    ds.channels = 1;
    ds.height = image_size;
    ds.width = image_size;
    ds.thresholds = thresholds;
    const double s = static_cast<double>(image_size);
    for (int c = 0; c < num_classes; ++c) {
        for (int k = 0; k < counts[static_cast<size_t>(c)]; ++k) {
            std::mt19937_64 rng(mix_seed(seed, (static_cast<uint64_t>(c) << 32) |
                                                   static_cast<uint64_t>(k)));
            std::uniform_real_distribution<double> uni(0.0, 1.0);
            std::vector<real> img(static_cast<size_t>(image_size) * image_size);
            for (auto& px : img) px = static_cast<real>(0.35 * uni(rng));
            // clutter: a few dim distractor dots
            for (int d = 0; d < 3; ++d) {
                const double cx = uni(rng) * s, cy = uni(rng) * s;
                const double cr = 0.5 + 0.8 * uni(rng);
                const double ci = 0.35 + 0.2 * uni(rng);
                for (int y = 0; y < image_size; ++y)
                    for (int x = 0; x < image_size; ++x)
                        if (std::hypot(x + 0.5 - cx, y + 0.5 - cy) <= cr) {
                            auto& px = img[static_cast<size_t>(y) * image_size + x];
                            px = std::max(px, static_cast<real>(ci));
                        }
            }
            const double cx = (0.32 + 0.36 * uni(rng)) * s;
            const double cy = (0.32 + 0.36 * uni(rng)) * s;
            const double r = (0.22 + 0.14 * uni(rng)) * s;
            const double t = std::max(1.0, 0.3 * r);
            const double amp = 0.75 + 0.25 * uni(rng);
            for (int y = 0; y < image_size; ++y)
                for (int x = 0; x < image_size; ++x)
                    if (pattern_hit(c, x + 0.5 - cx, y + 0.5 - cy, r, t)) {
                        auto& px = img[static_cast<size_t>(y) * image_size + x];
                        px = std::max(px, static_cast<real>(amp));
                    }
            ds.images.push_back(std::move(img));
            ds.labels.push_back(c);
        }
    }
    ds.rebuild_index();
    return ds;
}

DatasetBundle make_synth_bundle(int num_classes, const std::vector<int>& counts,
                                int test_per_class, int image_size, uint64_t seed,
                                SplitThresholds thresholds) {
    DatasetBundle bundle;
    bundle.train = synth_shapes(num_classes, counts, image_size, seed, thresholds);
    const std::vector<int> test_counts(static_cast<size_t>(num_classes), test_per_class);
    bundle.test =
        synth_shapes(num_classes, test_counts, image_size, mix_seed(seed, 0x7E57), thresholds);
    // Test split tags describe the *training* distribution.
    bundle.test.split_of = bundle.train.split_of;
    return bundle;
}

// ---- sampling ---------------------------------------------------------------

Sampler::Sampler(const LongTailedDataset& dataset, SamplerSpec spec)
    : dataset_(dataset), spec_(spec), rng_(spec.seed) {
    if (dataset_.size() == 0) throw std::invalid_argument("sampler: dataset is empty");
    if (spec_.batch_size < 1) throw std::invalid_argument("sampler: batch_size must be positive");
    if (spec_.kind == SamplerKind::class_balanced)
        for (int c = 0; c < dataset_.num_classes; ++c)
            if (dataset_.class_items[static_cast<size_t>(c)].empty())
                throw std::invalid_argument("sampler: class " + std::to_string(c) +
                                            " is empty under class-balanced sampling");
}

std::vector<int> Sampler::next_batch() {
    std::vector<int> batch(static_cast<size_t>(spec_.batch_size));
    if (spec_.kind == SamplerKind::instance_balanced) {
        std::uniform_int_distribution<int> pick(0, static_cast<int>(dataset_.size()) - 1);
        for (auto& idx : batch) idx = pick(rng_);
    } else {
        std::uniform_int_distribution<int> pick_class(0, dataset_.num_classes - 1);
        for (auto& idx : batch) {
            const auto& items = dataset_.class_items[static_cast<size_t>(pick_class(rng_))];
            std::uniform_int_distribution<int> pick_item(0, static_cast<int>(items.size()) - 1);
            idx = items[static_cast<size_t>(pick_item(rng_))];
        }
    }
    return batch;
}

// ---- dataset directory I/O ----------------------------------------------------

namespace {

void write_file(const fs::path& path, const void* data, size_t bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    if (!out) throw IoError("short write to " + path.string());
}

std::vector<char> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_split(const fs::path& dir, const std::string& prefix, const LongTailedDataset& ds) {
    std::vector<real> pixels;
    pixels.reserve(ds.size() * static_cast<size_t>(ds.image_numel()));
    for (const auto& img : ds.images) pixels.insert(pixels.end(), img.begin(), img.end());
    write_file(dir / (prefix + "_images.f32"), pixels.data(), pixels.size() * sizeof(real));
    std::vector<int32_t> labels(ds.labels.begin(), ds.labels.end());
    write_file(dir / (prefix + "_labels.i32"), labels.data(), labels.size() * sizeof(int32_t));
}

LongTailedDataset read_split(const fs::path& dir, const std::string& prefix, const json& m) {
    LongTailedDataset ds;
    ds.num_classes = m.at("num_classes").get<int>();
    ds.channels = m.at("channels").get<int>();
    ds.height = m.at("height").get<int>();
    ds.width = m.at("width").get<int>();
    ds.thresholds.many_gt = m.at("split_thresholds").at("many_gt").get<int>();
    ds.thresholds.low_lt = m.at("split_thresholds").at("low_lt").get<int>();
    const auto pixel_bytes = read_file(dir / (prefix + "_images.f32"));
    const auto label_bytes = read_file(dir / (prefix + "_labels.i32"));
    const size_t img_numel = static_cast<size_t>(ds.image_numel());
    if (label_bytes.size() % sizeof(int32_t) != 0)
        throw FormatError(prefix + "_labels.i32: size not a multiple of 4");
    const size_t n = label_bytes.size() / sizeof(int32_t);
    if (pixel_bytes.size() != n * img_numel * sizeof(real))
        throw FormatError(prefix + "_images.f32: expected " +
                          std::to_string(n * img_numel * sizeof(real)) + " bytes, found " +
                          std::to_string(pixel_bytes.size()));
    ds.labels.resize(n);
    std::memcpy(ds.labels.data(), label_bytes.data(), label_bytes.size());
    ds.images.resize(n);
    for (size_t i = 0; i < n; ++i) {
        ds.images[i].resize(img_numel);
        std::memcpy(ds.images[i].data(), pixel_bytes.data() + i * img_numel * sizeof(real),
                    img_numel * sizeof(real));
    }
    ds.rebuild_index();
    return ds;
}

}  // namespace

void save_dataset(const std::string& dir, const DatasetBundle& bundle,
                  const DatasetManifestInfo& info) {
    fs::create_directories(dir);
    json m;
    m["format_version"] = 1;
    m["source"] = info.source;
    m["seed"] = info.seed;
    m["rho"] = info.rho;
    m["num_classes"] = bundle.train.num_classes;
    m["channels"] = bundle.train.channels;
    m["height"] = bundle.train.height;
    m["width"] = bundle.train.width;
    json names = json::array();
    for (int c = 0; c < bundle.train.num_classes; ++c)
        names.push_back(info.source == "synthetic" ? synth_pattern_name(c)
                                                   : "class_" + std::to_string(c));
    m["class_names"] = names;
    m["split_thresholds"] = {{"many_gt", bundle.train.thresholds.many_gt},
                             {"low_lt", bundle.train.thresholds.low_lt}};
    m["train_counts"] = bundle.train.class_counts;
    m["test_counts"] = bundle.test.class_counts;
    json splits = json::array();
    for (Split s : bundle.train.split_of) splits.push_back(split_name(s));
    m["splits"] = splits;
    const std::string text = m.dump(2) + "\n";
    write_file(fs::path(dir) / "manifest.json", text.data(), text.size());
    write_split(dir, "train", bundle.train);
    write_split(dir, "test", bundle.test);
}

DatasetBundle load_dataset(const std::string& dir, DatasetManifestInfo* info_out) {
    const auto manifest_bytes = read_file(fs::path(dir) / "manifest.json");
    json m;
    try {
        m = json::parse(manifest_bytes.begin(), manifest_bytes.end());
    } catch (const std::exception& e) {
        throw FormatError("manifest.json: " + std::string(e.what()));
    }
    if (info_out) {
        info_out->source = m.at("source").get<std::string>();
        info_out->seed = m.at("seed").get<uint64_t>();
        info_out->rho = m.at("rho").get<double>();
    }
    DatasetBundle bundle;
    bundle.train = read_split(dir, "train", m);
    bundle.test = read_split(dir, "test", m);
    bundle.test.split_of = bundle.train.split_of;
    return bundle;
}

uint64_t mix_seed(uint64_t seed, uint64_t stream) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace camcal
