#include "ood/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "ood/common.hpp"

namespace ood {

namespace {

constexpr int kCifarSide = 32;
constexpr int kCifarPixels = kCifarSide * kCifarSide;

int record_bytes(CifarVariant v) {
    return v == CifarVariant::C10 ? 1 + 3 * kCifarPixels : 2 + 3 * kCifarPixels;
}

}  // namespace

ImageDataset load_cifar_bin(const std::string& path, CifarVariant variant) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    const int rec = record_bytes(variant);
    if (bytes.empty() || bytes.size() % static_cast<std::size_t>(rec) != 0)
        throw FormatError(path + ": size " + std::to_string(bytes.size()) +
                          " is not a multiple of the record length " + std::to_string(rec) +
                          " (offset of trailing partial record: " +
                          std::to_string(bytes.size() / rec * rec) + ")");
    ImageDataset ds;
    ds.source = path;
    ds.image_size = kCifarSide;
    const std::size_t n = bytes.size() / static_cast<std::size_t>(rec);
    for (std::size_t r = 0; r < n; ++r) {
        const unsigned char* p = &bytes[r * static_cast<std::size_t>(rec)];
        // CIFAR-100 stores coarse then fine label; keep the fine one.
        ds.labels.push_back(variant == CifarVariant::C10 ? p[0] : p[1]);
        const unsigned char* pix = p + (variant == CifarVariant::C10 ? 1 : 2);
        Image img(kCifarSide, kCifarSide);
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < kCifarPixels; ++i)
                img.px[static_cast<std::size_t>(i) * 3 + c] =
                    static_cast<Real>(pix[c * kCifarPixels + i]) / 255.0;
        ds.images.push_back(std::move(img));
    }
    return ds;
}

void save_cifar_bin(const std::string& path, const ImageDataset& ds, CifarVariant variant) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path);
    for (std::size_t r = 0; r < ds.size(); ++r) {
        const Image& img = ds.images[r];
        if (img.h != kCifarSide || img.w != kCifarSide)
            throw FormatError("save_cifar_bin: images must be 32x32");
        const int label = ds.labels.empty() ? 0 : ds.labels[r];
        if (variant == CifarVariant::C100) out.put(0);  // coarse label placeholder
        out.put(static_cast<char>(label));
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < kCifarPixels; ++i) {
                const Real v = img.px[static_cast<std::size_t>(i) * 3 + c];
                const int b = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
                out.put(static_cast<char>(b));
            }
    }
}

namespace {

std::optional<Image> load_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::string magic;
    in >> magic;
    if (magic != "P6") return std::nullopt;
    auto next_int = [&in]() -> int {
        int v;
        // skip whitespace and comment lines
        while (in >> std::ws && in.peek() == '#') in.ignore(1 << 20, '\n');
        if (!(in >> v)) return -1;
        return v;
    };
    const int w = next_int();
    const int h = next_int();
    const int maxval = next_int();
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) return std::nullopt;
    in.ignore(1);  // single whitespace before raster
    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size()) return std::nullopt;
    Image img(h, w);
    for (std::size_t i = 0; i < raw.size(); ++i)
        img.px[i] = static_cast<Real>(raw[i]) / maxval;
    return img;
}

}  // namespace

ImageDataset load_image_folder(const std::string& path, int target_size) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(path)) throw FormatError(path + " is not a directory");
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(path))
        if (e.is_regular_file()) files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    ImageDataset ds;
    ds.source = path;
    ds.image_size = target_size;
    for (const auto& f : files) {
        auto img = load_ppm(f);
        if (!img) {
            std::cerr << "warning: skipping undecodable file " << f << "\n";
            continue;
        }
        ds.images.push_back(resize_bilinear(*img, target_size, target_size));
    }
    if (ds.images.empty()) throw FormatError(path + ": no decodable images");
    return ds;
}

SynthKind synth_kind_from_string(const std::string& name) {
    if (name == "stripes") return SynthKind::Stripes;
    if (name == "blobs") return SynthKind::Blobs;
    if (name == "noise") return SynthKind::Noise;
    if (name == "checker") return SynthKind::Checker;
    throw ConfigError("unknown synthetic dataset kind: " + name);
}

namespace {

constexpr Real kPi = 3.14159265358979323846;

std::array<Real, 3> random_tint(std::mt19937_64& rng) {
    std::uniform_real_distribution<Real> u(0.75, 1.0);
    return {u(rng), u(rng), u(rng)};
}

void add_noise(Image& img, Real sigma, std::mt19937_64& rng) {
    if (sigma <= 0) return;
    std::normal_distribution<Real> n(0.0, sigma);
    for (Real& v : img.px) v += n(rng);
    clamp01(img);
}

Image stripe_image(int size, Real theta, Real freq, Real phase,
                   const std::array<Real, 3>& tint, Real noise_sigma, std::mt19937_64& rng) {
    Image img(size, size);
    const Real cx = std::cos(theta), sy = std::sin(theta);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const Real u = (x * cx + y * sy) / size;
            const Real v = 0.5 + 0.4 * std::sin(2 * kPi * freq * u + phase);
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = v * tint[static_cast<std::size_t>(c)];
        }
    add_noise(img, noise_sigma, rng);
    return img;
}

Image blob_image(int size, int n_blobs, std::mt19937_64& rng, Real noise_sigma) {
    Image img(size, size);
    std::uniform_real_distribution<Real> upos(0.0, static_cast<Real>(size));
    std::uniform_real_distribution<Real> uw(size / 10.0, size / 4.0);
    const auto tint = random_tint(rng);
    std::vector<std::array<Real, 3>> blobs;
    for (int b = 0; b < n_blobs; ++b) blobs.push_back({upos(rng), upos(rng), uw(rng)});
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            Real v = 0.15;
            for (const auto& bl : blobs) {
                const Real dx = std::abs(x - bl[0]), dy = std::abs(y - bl[1]);
                const Real r = std::max(dx, dy);  // square-support bump
                v += 0.8 * std::exp(-(r * r) / (2 * bl[2] * bl[2]));
            }
            v = std::min(v, 1.0);
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = v * tint[static_cast<std::size_t>(c)];
        }
    add_noise(img, noise_sigma, rng);
    return img;
}

Image noise_image(int size, std::mt19937_64& rng) {
    Image img(size, size);
    std::uniform_real_distribution<Real> u(0.0, 1.0);
    for (Real& v : img.px) v = u(rng);
    return img;
}

Image checker_image(int size, int cell, std::mt19937_64& rng, Real noise_sigma) {
    Image img(size, size);
    const auto tint = random_tint(rng);
    std::uniform_int_distribution<int> uoff(0, cell - 1);
    const int oy = uoff(rng), ox = uoff(rng);
    const Real lo = 0.15, hi = 0.85;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const bool on = (((y + oy) / cell) + ((x + ox) / cell)) % 2 == 0;
            const Real v = on ? hi : lo;
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = v * tint[static_cast<std::size_t>(c)];
        }
    add_noise(img, noise_sigma, rng);
    return img;
}

}  // namespace

ImageDataset synth_dataset(SynthKind kind, int n, int size, std::uint64_t seed) {
    if (n < 1) throw ParameterError("synth_dataset: n must be >= 1");
    ImageDataset ds;
    ds.image_size = size;
    const Real noise_sigma = 0.02;
    for (int i = 0; i < n; ++i) {
        std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        switch (kind) {
            case SynthKind::Stripes: {
                ds.source = "synthetic:stripes";
                const int cls = std::uniform_int_distribution<int>(0, 1)(rng);
                const Real theta = cls == 0 ? 0.0 : kPi / 4.0;
                const Real freq = std::uniform_real_distribution<Real>(2.0, 4.0)(rng);
                const Real phase = std::uniform_real_distribution<Real>(0.0, 2 * kPi)(rng);
                const auto tint = random_tint(rng);
                ds.images.push_back(stripe_image(size, theta, freq, phase, tint, noise_sigma, rng));
                ds.labels.push_back(cls);
                break;
            }
            case SynthKind::Blobs: {
                ds.source = "synthetic:blobs";
                const int count = std::uniform_int_distribution<int>(1, 4)(rng);
                ds.images.push_back(blob_image(size, count, rng, noise_sigma));
                ds.labels.push_back(count - 1);
                break;
            }
            case SynthKind::Noise: {
                ds.source = "synthetic:noise";
                ds.images.push_back(noise_image(size, rng));
                ds.labels.push_back(0);
                break;
            }
            case SynthKind::Checker: {
                ds.source = "synthetic:checker";
                const int cls = std::uniform_int_distribution<int>(0, 1)(rng);
                const int cell = cls == 0 ? size / 8 : size / 4;
                ds.images.push_back(checker_image(size, std::max(1, cell), rng, noise_sigma));
                ds.labels.push_back(cls);
                break;
            }
        }
    }
    return ds;
}

ColorHistogram color_histogram(const ImageDataset& ds, int bins) {
    if (bins < 2) throw ParameterError("color_histogram: bins must be >= 2");
    ColorHistogram h;
    h.bins = bins;
    for (int c = 0; c < 3; ++c) h.channel[c].assign(static_cast<std::size_t>(bins), 0.0);
    std::int64_t count = 0;
    for (const Image& img : ds.images) {
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x)
                for (int c = 0; c < 3; ++c) {
                    const Real v = std::clamp(img.at(y, x, c), 0.0, 1.0);
                    int b = static_cast<int>(v * bins);
                    if (b == bins) b = bins - 1;
                    h.channel[c][static_cast<std::size_t>(b)] += 1.0;
                }
        count += static_cast<std::int64_t>(img.h) * img.w;
    }
    if (count > 0)
        for (int c = 0; c < 3; ++c)
            for (Real& v : h.channel[c]) v /= static_cast<Real>(count);
    return h;
}

Real histogram_distance(const ColorHistogram& a, const ColorHistogram& b) {
    if (a.bins != b.bins) throw ParameterError("histogram_distance: bin counts differ");
    Real total = 0;
    for (int c = 0; c < 3; ++c) {
        Real l1 = 0;
        for (int i = 0; i < a.bins; ++i)
            l1 += std::abs(a.channel[c][static_cast<std::size_t>(i)] -
                           b.channel[c][static_cast<std::size_t>(i)]);
        total += l1;
    }
    return total / 3.0;
}

}  // namespace ood
