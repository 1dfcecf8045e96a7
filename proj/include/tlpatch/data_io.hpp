#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tlpatch/core.hpp"
#include "tlpatch/trainer.hpp"

namespace tlpatch {

namespace fs = std::filesystem;

// Raster I/O. Reads 8- or 16-bit images (gray is replicated to RGB) and normalises to [0,1];
// writes 8-bit RGB PNG.
Image read_image(const fs::path& path);
void write_image(const Image& image, const fs::path& path);

// classes.txt: one class name per line, id = line index.
ClassMap load_class_map(const fs::path& path);
void save_class_map(const ClassMap& classes, const fs::path& path);

// Annotation text: one "class_id cx cy w h" line per object, all but class_id normalised
// centre-format values in [0,1]. Denormalised coordinates within 1e-6 of an integer are
// snapped to it; boxes reaching past the image are clipped with a warning.
std::vector<GroundTruth> parse_annotations(std::istream& in, int image_width, int image_height,
                                           const ClassMap& classes, const std::string& source);
std::string format_annotations(std::span<const GroundTruth> boxes, int image_width, int image_height);

// <root>/<stem>.png + <root>/<stem>.txt pairs, loaded in lexicographic order of stem.
std::vector<AnnotatedImage> load_dataset(const fs::path& root, const ClassMap& classes);
void save_dataset(std::span<const AnnotatedImage> dataset, const fs::path& root, const ClassMap& classes);

std::string sha256_hex(std::span<const unsigned char> bytes);

// NumPy .npy (v1.0, '<f8', C order, shape H x W x C).
std::vector<unsigned char> encode_npy(const Image& image);
Image decode_npy(std::span<const unsigned char> bytes);

inline constexpr int kPatchSchemaVersion = 1;

struct PatchMetadata {
    int schema_version = kPatchSchemaVersion;
    std::string class_map;          // class map name
    std::vector<std::string> class_names;
    TargetClassMapping mapping;
    AttackConfig config;
    std::string training_set;
    std::string created_utc;
    std::string pixels_sha256;      // filled in by save_patch
};

struct PatchBundle {
    Patch patch;
    PatchMetadata metadata;
};

// Writes patch.npy (exact pixels), patch.json (metadata) and patch_preview.png into dir.
void save_patch(PatchBundle& bundle, const fs::path& dir);
// Verifies the pixel hash; throws IntegrityError on mismatch.
PatchBundle load_patch(const fs::path& dir);

nlohmann::json metadata_json(const PatchMetadata& meta);
PatchMetadata metadata_from_json(const nlohmann::json& j);

std::string utc_timestamp();

struct PrintPlan {
    double light_width_m = 0.0;
    double scale_factor = 0.0;
    double side_m = 0.0;
    double side_cm = 0.0;  // rounded to 0.1 mm
    int side_px = 0;
    int dpi = 0;
    std::string file_stem;  // e.g. patch_print_60x60cm_150dpi
};

inline constexpr double kMaxPrintSideM = 2.0;

// side = scale_factor x light width; refuses sides over 2 m and dpi below 72.
PrintPlan plan_print(double light_width_m, double scale_factor, int dpi);
// Renders the raster at side_m x dpi pixels plus a JSON sidecar with the physical size.
PrintPlan export_print(const Patch& patch, double light_width_m, double scale_factor, int dpi,
                       const fs::path& out_dir);

// Boxes + labels drawn over the image: GT in white, detections in their class colour.
void write_overlay(const Image& image, std::span<const GroundTruth> gt, std::span<const Detection> dets,
                   const ClassMap& classes, const fs::path& path);

nlohmann::json to_json(const StepRecord& rec);

}  // namespace tlpatch
