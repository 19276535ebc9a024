#pragma once

// Loading and validating an image ensemble.
//
// Per instance i the ensemble directory holds:
//   i.rgb.png       8-bit RGB
//   i.mask.png      8-bit, > 127 is foreground
//   i.clusters.png  8-bit part labels, 0 = background
//   i.feat.bin      HLFM feature map (see image.hpp)

#include "artshape/config.hpp"
#include "artshape/errors.hpp"
#include "artshape/image.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

namespace artshape {

struct InstanceRecord {
    RgbImage rgb;
    ByteGrid pseudo_mask; // 1 = foreground
    FeatureMap feature_map;
    ByteGrid part_clusters; // 0 = background

    [[nodiscard]] int height() const { return static_cast<int>(pseudo_mask.rows()); }
    [[nodiscard]] int width() const { return static_cast<int>(pseudo_mask.cols()); }
};

// Nearest-neighbour resampling of a feature grid to (h, w).
inline FeatureMap upsample_nearest(const FeatureMap& fm, int h, int w)
{
    FeatureMap out;
    out.height = h;
    out.width = w;
    out.dim = fm.dim;
    out.data.resize(fm.dim, static_cast<Eigen::Index>(h) * w);
    for (int y = 0; y < h; ++y) {
        const int sy = static_cast<int>(static_cast<long long>(y) * fm.height / h);
        for (int x = 0; x < w; ++x) {
            const int sx = static_cast<int>(static_cast<long long>(x) * fm.width / w);
            out.at(y, x) = fm.at(sy, sx);
        }
    }
    return out;
}

inline std::string instance_file(int i, const char* suffix)
{
    return std::to_string(i) + suffix;
}

// Checks the record invariants and unit-normalizes foreground descriptors.
// `name` prefixes every message.
inline void validate_record(InstanceRecord& r, const std::string& name)
{
    const int h = r.height();
    const int w = r.width();
    if (h == 0 || w == 0) {
        throw ValidationError(name + ": empty mask");
    }
    if (r.part_clusters.rows() != h || r.part_clusters.cols() != w) {
        throw ValidationError(name + ": clusters are " + std::to_string(r.part_clusters.rows()) + "x" +
                              std::to_string(r.part_clusters.cols()) + ", mask is " + std::to_string(h) + "x" +
                              std::to_string(w));
    }
    if (r.rgb.height != h || r.rgb.width != w) {
        throw ValidationError(name + ": rgb size differs from mask size");
    }
    for (Eigen::Index p = 0; p < r.feature_map.data.cols(); ++p) {
        for (Eigen::Index c = 0; c < r.feature_map.data.rows(); ++c) {
            if (!std::isfinite(r.feature_map.data(c, p))) {
                throw ValidationError(name + ": non-finite feature at pixel (x=" +
                                      std::to_string(p % r.feature_map.width) +
                                      ", y=" + std::to_string(p / r.feature_map.width) + ")");
            }
        }
    }
    if (r.feature_map.height != h || r.feature_map.width != w) {
        if (r.feature_map.height > h || r.feature_map.width > w) {
            throw ValidationError(name + ": feature grid larger than mask");
        }
        r.feature_map = upsample_nearest(r.feature_map, h, w);
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (r.pseudo_mask(y, x) == 0 && r.part_clusters(y, x) != 0) {
                throw ValidationError(name + ": part label outside the mask at (x=" + std::to_string(x) +
                                      ", y=" + std::to_string(y) + ")");
            }
            auto f = r.feature_map.at(y, x);
            const double n = f.norm();
            if (r.pseudo_mask(y, x) != 0) {
                if (n == 0.0) {
                    throw ValidationError(name + ": zero descriptor at foreground pixel (x=" + std::to_string(x) +
                                          ", y=" + std::to_string(y) + ")");
                }
                f /= n;
            }
        }
    }
}

inline InstanceRecord load_instance(const std::filesystem::path& dir, int i)
{
    const std::string name = "instance " + std::to_string(i);
    auto need = [&](const char* suffix) {
        const auto p = dir / instance_file(i, suffix);
        if (!std::filesystem::exists(p)) {
            throw IoError(name + ": missing file " + p.string());
        }
        return p;
    };
    InstanceRecord r;
    r.rgb = png_io::read_rgb(need(".rgb.png"));
    const ByteGrid mask_raw = png_io::read_gray(need(".mask.png"));
    r.pseudo_mask = (mask_raw.array() > 127).cast<std::uint8_t>().matrix();
    r.part_clusters = png_io::read_gray(need(".clusters.png"));
    r.feature_map = feature_io::read(need(".feat.bin"));
    validate_record(r, name);
    return r;
}

inline std::vector<InstanceRecord> load_ensemble(const std::filesystem::path& dir, const EnsembleConfig& config)
{
    if (!std::filesystem::is_directory(dir)) {
        throw IoError("ensemble directory " + dir.string() + " does not exist");
    }
    std::vector<InstanceRecord> out;
    out.reserve(static_cast<std::size_t>(config.n_instances));
    for (int i = 0; i < config.n_instances; ++i) {
        InstanceRecord r = load_instance(dir, i);
        if (r.height() != config.image_height || r.width() != config.image_width) {
            throw ValidationError("instance " + std::to_string(i) + ": image is " + std::to_string(r.height()) +
                                  "x" + std::to_string(r.width()) + " but config declares " +
                                  std::to_string(config.image_height) + "x" + std::to_string(config.image_width));
        }
        out.push_back(std::move(r));
    }
    return out;
}

inline void write_instance(const std::filesystem::path& dir, int i, const InstanceRecord& r)
{
    std::filesystem::create_directories(dir);
    png_io::write_rgb(dir / instance_file(i, ".rgb.png"), r.rgb);
    ByteGrid mask = (r.pseudo_mask.array() != 0).cast<std::uint8_t>().matrix() * std::uint8_t{255};
    png_io::write_gray(dir / instance_file(i, ".mask.png"), mask);
    png_io::write_gray(dir / instance_file(i, ".clusters.png"), r.part_clusters);
    feature_io::write(dir / instance_file(i, ".feat.bin"), r.feature_map);
}

inline void write_ensemble(const std::filesystem::path& dir, const std::vector<InstanceRecord>& records)
{
    for (std::size_t i = 0; i < records.size(); ++i) {
        write_instance(dir, static_cast<int>(i), records[i]);
    }
}

inline int distinct_part_labels(const ByteGrid& clusters)
{
    std::set<int> labels;
    for (Eigen::Index k = 0; k < clusters.size(); ++k) {
        if (clusters(k) != 0) {
            labels.insert(clusters(k));
        }
    }
    return static_cast<int>(labels.size());
}

// Explicit reference index, else the instance with the most distinct part
// labels; ties go to the larger foreground area, then the lower index.
inline int select_reference(const std::vector<InstanceRecord>& records, const EnsembleConfig& config)
{
    if (records.empty()) {
        throw ValidationError("select_reference: empty ensemble");
    }
    if (config.reference_index) {
        if (*config.reference_index < 0 || *config.reference_index >= static_cast<int>(records.size())) {
            throw ValidationError("select_reference: reference_index out of range");
        }
        return *config.reference_index;
    }
    int best = 0;
    int best_labels = -1;
    long long best_area = -1;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const int labels = distinct_part_labels(records[i].part_clusters);
        const long long area = records[i].pseudo_mask.cast<long long>().sum();
        if (labels > best_labels || (labels == best_labels && area > best_area)) {
            best = static_cast<int>(i);
            best_labels = labels;
            best_area = area;
        }
    }
    return best;
}

} // namespace artshape
