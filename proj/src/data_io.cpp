#include "tlpatch/data_io.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <regex>
#include <sstream>

#include <openssl/evp.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <spdlog/spdlog.h>

#include "tlpatch/compositor.hpp"
#include "tlpatch/config_json.hpp"

namespace tlpatch {
namespace {

std::vector<unsigned char> read_bytes(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, std::span<const unsigned char> bytes)
{
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path);
    out << text;
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
}

double snap(double v)
{
    const double r = std::round(v);
    return std::abs(v - r) < 1e-6 ? r : v;
}

cv::Mat to_bgr8(const Image& image)
{
    if (image.channels() != 3) {
        throw DataError("write_image: expected an RGB image");
    }
    cv::Mat mat(image.height(), image.width(), CV_8UC3);
    for (int y = 0; y < image.height(); ++y) {
        auto* row = mat.ptr<cv::Vec3b>(y);
        for (int x = 0; x < image.width(); ++x) {
            for (int c = 0; c < 3; ++c) {
                row[x][2 - c] = static_cast<unsigned char>(std::lround(std::clamp(image.at(x, y, c), 0.0, 1.0) * 255.0));
            }
        }
    }
    return mat;
}

const std::vector<std::string> kImageExtensions{".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"};

std::string format_cm(double cm)
{
    std::ostringstream out;
    if (std::abs(cm - std::round(cm)) < 1e-9) {
        out << static_cast<long>(std::lround(cm));
    } else {
        out << std::fixed << std::setprecision(1) << cm;
    }
    return out.str();
}

}  // namespace

Image read_image(const fs::path& path)
{
    const cv::Mat raw = cv::imread(path.string(), cv::IMREAD_ANYDEPTH | cv::IMREAD_ANYCOLOR);
    if (raw.empty()) {
        throw DataError("cannot read image " + path.string());
    }
    double scale = 0.0;
    switch (raw.depth()) {
    case CV_8U: scale = 1.0 / 255.0; break;
    case CV_16U: scale = 1.0 / 65535.0; break;
    default: throw DataError("unsupported bit depth in " + path.string());
    }
    cv::Mat rgb;
    if (raw.channels() == 1) {
        cv::cvtColor(raw, rgb, cv::COLOR_GRAY2RGB);
    } else if (raw.channels() == 4) {
        cv::cvtColor(raw, rgb, cv::COLOR_BGRA2RGB);
    } else {
        cv::cvtColor(raw, rgb, cv::COLOR_BGR2RGB);
    }
    cv::Mat real;
    rgb.convertTo(real, CV_64FC3, 1.0);
    Image out(real.cols, real.rows, 3);
    for (int y = 0; y < real.rows; ++y) {
        const auto* row = real.ptr<cv::Vec3d>(y);
        for (int x = 0; x < real.cols; ++x) {
            for (int c = 0; c < 3; ++c) {
                // Divide rather than multiply so 8-bit k maps to exactly k / 255.0.
                out.at(x, y, c) = raw.depth() == CV_8U ? row[x][c] / 255.0 : row[x][c] * scale;
            }
        }
    }
    return out;
}

void write_image(const Image& image, const fs::path& path)
{
    if (!cv::imwrite(path.string(), to_bgr8(image))) {
        throw DataError("cannot write image " + path.string());
    }
}

ClassMap load_class_map(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open class map " + path.string());
    }
    std::vector<std::string> names;
    std::string line;
    while (std::getline(in, line)) {
        line.erase(line.find_last_not_of(" \t\r") + 1);
        line.erase(0, line.find_first_not_of(" \t"));
        if (!line.empty()) {
            names.push_back(line);
        }
    }
    return ClassMap(std::move(names), path.stem().string());
}

void save_class_map(const ClassMap& classes, const fs::path& path)
{
    std::string text;
    for (const auto& n : classes.names()) {
        text += n + '\n';
    }
    write_text(path, text);
}

std::vector<GroundTruth> parse_annotations(std::istream& in, int image_width, int image_height,
                                           const ClassMap& classes, const std::string& source)
{
    std::vector<GroundTruth> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        std::istringstream fields(line);
        std::vector<std::string> tok;
        for (std::string t; fields >> t;) {
            tok.push_back(t);
        }
        const std::string where = source + ":" + std::to_string(line_no);
        if (tok.size() != 5) {
            throw DataError(where + ": expected 5 fields 'class_id cx cy w h', got " + std::to_string(tok.size()));
        }
        ClassId id = 0;
        double v[4];
        try {
            std::size_t used = 0;
            id = std::stoi(tok[0], &used);
            if (used != tok[0].size()) {
                throw std::invalid_argument("class id");
            }
            for (int k = 0; k < 4; ++k) {
                v[k] = std::stod(tok[k + 1], &used);
                if (used != tok[k + 1].size()) {
                    throw std::invalid_argument("value");
                }
            }
        } catch (const std::logic_error&) {
            throw DataError(where + ": malformed number in '" + line + "'");
        }
        if (!classes.contains(id)) {
            throw DataError(where + ": class id " + std::to_string(id) + " outside the class map");
        }
        for (double x : v) {
            if (!(x >= 0.0 && x <= 1.0)) {
                throw DataError(where + ": normalised value outside [0,1] in '" + line + "'");
            }
        }
        const double W = image_width;
        const double H = image_height;
        BBox box{snap((v[0] - 0.5 * v[2]) * W), snap((v[1] - 0.5 * v[3]) * H), snap((v[0] + 0.5 * v[2]) * W),
                 snap((v[1] + 0.5 * v[3]) * H)};
        if (!box.inside(image_width, image_height)) {
            spdlog::warn("{}: box extends past the image, clipped", where);
            box = BBox{std::clamp(box.x_min, 0.0, W), std::clamp(box.y_min, 0.0, H), std::clamp(box.x_max, 0.0, W),
                       std::clamp(box.y_max, 0.0, H)};
        }
        if (!box.valid()) {
            spdlog::warn("{}: degenerate box dropped", where);
            continue;
        }
        out.push_back(GroundTruth{box, id});
    }
    return out;
}

std::string format_annotations(std::span<const GroundTruth> boxes, int image_width, int image_height)
{
    std::ostringstream out;
    out << std::setprecision(17);
    for (const GroundTruth& g : boxes) {
        out << g.class_id << ' ' << g.box.center_x() / image_width << ' ' << g.box.center_y() / image_height << ' '
            << g.box.width() / image_width << ' ' << g.box.height() / image_height << '\n';
    }
    return out.str();
}

std::vector<AnnotatedImage> load_dataset(const fs::path& root, const ClassMap& classes)
{
    if (!fs::is_directory(root)) {
        throw DataError("dataset root " + root.string() + " is not a directory");
    }
    std::vector<fs::path> images;
    for (const auto& entry : fs::directory_iterator(root)) {
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
        if (entry.is_regular_file() &&
            std::find(kImageExtensions.begin(), kImageExtensions.end(), ext) != kImageExtensions.end()) {
            images.push_back(entry.path());
        }
    }
    std::sort(images.begin(), images.end());
    std::vector<AnnotatedImage> out;
    for (const fs::path& img_path : images) {
        fs::path ann = img_path;
        ann.replace_extension(".txt");
        if (!fs::exists(ann)) {
            throw DataError("missing annotation file " + ann.string());
        }
        AnnotatedImage sample;
        sample.image_id = img_path.stem().string();
        sample.image = read_image(img_path);
        std::ifstream in(ann);
        sample.gt = parse_annotations(in, sample.image.width(), sample.image.height(), classes, ann.string());
        out.push_back(std::move(sample));
    }
    return out;
}

void save_dataset(std::span<const AnnotatedImage> dataset, const fs::path& root, const ClassMap& classes)
{
    fs::create_directories(root);
    save_class_map(classes, root / "classes.txt");
    for (const AnnotatedImage& sample : dataset) {
        write_image(sample.image, root / (sample.image_id + ".png"));
        write_text(root / (sample.image_id + ".txt"),
                   format_annotations(sample.gt, sample.image.width(), sample.image.height()));
    }
}

std::string sha256_hex(std::span<const unsigned char> bytes)
{
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256 failed");
    }
    std::ostringstream out;
    for (unsigned int i = 0; i < len; ++i) {
        out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    }
    return out.str();
}

std::vector<unsigned char> encode_npy(const Image& image)
{
    std::ostringstream header;
    header << "{'descr': '<f8', 'fortran_order': False, 'shape': (" << image.height() << ", " << image.width() << ", "
           << image.channels() << "), }";
    std::string h = header.str();
    const std::size_t prefix = 10;  // magic(6) + version(2) + length(2)
    const std::size_t total = ((prefix + h.size() + 1 + 63) / 64) * 64;
    h.append(total - prefix - h.size() - 1, ' ');
    h.push_back('\n');

    std::vector<unsigned char> out{0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0};
    out.push_back(static_cast<unsigned char>(h.size() & 0xff));
    out.push_back(static_cast<unsigned char>(h.size() >> 8));
    out.insert(out.end(), h.begin(), h.end());
    static_assert(sizeof(double) == 8);
    for (double v : image.values()) {
        unsigned char b[8];
        std::memcpy(b, &v, 8);  // little-endian host assumed (x86-64 / aarch64)
        out.insert(out.end(), b, b + 8);
    }
    return out;
}

Image decode_npy(std::span<const unsigned char> bytes)
{
    static const unsigned char magic[6] = {0x93, 'N', 'U', 'M', 'P', 'Y'};
    if (bytes.size() < 10 || !std::equal(magic, magic + 6, bytes.begin()) || bytes[6] != 1) {
        throw DataError("not a version 1 .npy file");
    }
    const std::size_t hlen = bytes[8] | (static_cast<std::size_t>(bytes[9]) << 8);
    if (bytes.size() < 10 + hlen) {
        throw DataError(".npy header truncated");
    }
    const std::string header(bytes.begin() + 10, bytes.begin() + 10 + static_cast<std::ptrdiff_t>(hlen));
    static const std::regex shape_re(R"('shape':\s*\((\d+),\s*(\d+),\s*(\d+)\))");
    std::smatch m;
    if (header.find("'descr': '<f8'") == std::string::npos || header.find("'fortran_order': False") == std::string::npos ||
        !std::regex_search(header, m, shape_re)) {
        throw DataError(".npy must be C-order float64 with a 3-d shape");
    }
    const int h = std::stoi(m[1]);
    const int w = std::stoi(m[2]);
    const int c = std::stoi(m[3]);
    Image out(w, h, c);
    const std::size_t need = out.values().size() * 8;
    if (bytes.size() != 10 + hlen + need) {
        throw DataError(".npy payload size does not match its shape");
    }
    std::memcpy(out.values().data(), bytes.data() + 10 + hlen, need);
    return out;
}

std::string utc_timestamp()
{
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream out;
    out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return out.str();
}

nlohmann::json metadata_json(const PatchMetadata& meta)
{
    nlohmann::json mapping = nlohmann::json::array();
    for (const auto& [from, to] : meta.mapping.entries()) {
        mapping.push_back({{"from", from}, {"to", to}});
    }
    return {{"schema_version", meta.schema_version},
            {"class_map", meta.class_map},
            {"class_names", meta.class_names},
            {"target_mapping", mapping},
            {"attack_config", meta.config},
            {"training_set", meta.training_set},
            {"created_utc", meta.created_utc},
            {"pixels_file", "patch.npy"},
            {"pixels_sha256", meta.pixels_sha256}};
}

PatchMetadata metadata_from_json(const nlohmann::json& j)
{
    PatchMetadata meta;
    try {
        meta.schema_version = j.at("schema_version").get<int>();
        if (meta.schema_version != kPatchSchemaVersion) {
            throw DataError("unsupported patch schema version " + std::to_string(meta.schema_version));
        }
        meta.class_map = j.at("class_map").get<std::string>();
        meta.class_names = j.at("class_names").get<std::vector<std::string>>();
        std::map<ClassId, ClassId> entries;
        for (const auto& e : j.at("target_mapping")) {
            entries.emplace(e.at("from").get<ClassId>(), e.at("to").get<ClassId>());
        }
        meta.mapping = TargetClassMapping(std::move(entries));
        meta.config = j.at("attack_config").get<AttackConfig>();
        meta.training_set = j.at("training_set").get<std::string>();
        meta.created_utc = j.at("created_utc").get<std::string>();
        meta.pixels_sha256 = j.at("pixels_sha256").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("patch metadata: ") + e.what());
    }
    return meta;
}

void save_patch(PatchBundle& bundle, const fs::path& dir)
{
    fs::create_directories(dir);
    const auto bytes = encode_npy(bundle.patch.pixels());
    bundle.metadata.pixels_sha256 = sha256_hex(bytes);
    if (bundle.metadata.created_utc.empty()) {
        bundle.metadata.created_utc = utc_timestamp();
    }
    write_bytes(dir / "patch.npy", bytes);
    write_text(dir / "patch.json", metadata_json(bundle.metadata).dump(2) + "\n");
    write_image(bundle.patch.pixels(), dir / "patch_preview.png");
}

PatchBundle load_patch(const fs::path& dir)
{
    std::ifstream meta_in(dir / "patch.json");
    if (!meta_in) {
        throw DataError("cannot open " + (dir / "patch.json").string());
    }
    nlohmann::json j;
    try {
        meta_in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("patch.json: ") + e.what());
    }
    PatchBundle bundle;
    bundle.metadata = metadata_from_json(j);
    const auto bytes = read_bytes(dir / "patch.npy");
    const std::string digest = sha256_hex(bytes);
    if (digest != bundle.metadata.pixels_sha256) {
        throw IntegrityError("patch.npy hash " + digest + " does not match metadata " + bundle.metadata.pixels_sha256);
    }
    bundle.patch = Patch(decode_npy(bytes));
    return bundle;
}

PrintPlan plan_print(double light_width_m, double scale_factor, int dpi)
{
    if (!(light_width_m > 0.0)) {
        throw ConfigError("light width must be positive");
    }
    if (!(scale_factor > 0.0)) {
        throw ConfigError("scale factor must be positive");
    }
    if (dpi < 72) {
        throw ConfigError("dpi must be >= 72");
    }
    PrintPlan plan;
    plan.light_width_m = light_width_m;
    plan.scale_factor = scale_factor;
    plan.dpi = dpi;
    plan.side_m = scale_factor * light_width_m;
    if (plan.side_m > kMaxPrintSideM) {
        throw ConfigError("printed patch side " + std::to_string(plan.side_m) + " m exceeds the 2 m limit");
    }
    plan.side_cm = std::round(plan.side_m * 1000.0) / 10.0;
    plan.side_px = static_cast<int>(std::lround(plan.side_m / 0.0254 * dpi));
    const std::string cm = format_cm(plan.side_cm);
    plan.file_stem = "patch_print_" + cm + "x" + cm + "cm_" + std::to_string(dpi) + "dpi";
    return plan;
}

PrintPlan export_print(const Patch& patch, double light_width_m, double scale_factor, int dpi,
                       const fs::path& out_dir)
{
    const PrintPlan plan = plan_print(light_width_m, scale_factor, dpi);
    fs::create_directories(out_dir);
    const Image raster = resize_bilinear(patch.pixels(), plan.side_px, plan.side_px);
    const fs::path png = out_dir / (plan.file_stem + ".png");
    const std::vector<int> params{cv::IMWRITE_PNG_COMPRESSION, 3};
    if (!cv::imwrite(png.string(), to_bgr8(raster), params)) {
        throw DataError("cannot write " + png.string());
    }
    const nlohmann::json side = {{"light_width_m", plan.light_width_m},
                                 {"scale_factor", plan.scale_factor},
                                 {"side_m", plan.side_m},
                                 {"side_cm", plan.side_cm},
                                 {"side_px", plan.side_px},
                                 {"dpi", plan.dpi},
                                 {"raster", png.filename().string()},
                                 {"source_sha256", sha256_hex(encode_npy(patch.pixels()))}};
    write_text(out_dir / (plan.file_stem + ".json"), side.dump(2) + "\n");
    return plan;
}

void write_overlay(const Image& image, std::span<const GroundTruth> gt, std::span<const Detection> dets,
                   const ClassMap& classes, const fs::path& path)
{
    cv::Mat mat = to_bgr8(image);
    auto colour = [&](ClassId c) {
        const std::string& n = classes.contains(c) ? classes.name_of(c) : std::string();
        if (n.rfind("red", 0) == 0) return cv::Scalar(0, 0, 255);
        if (n.rfind("green", 0) == 0) return cv::Scalar(0, 255, 0);
        return cv::Scalar(0, 255, 255);
    };
    auto rect = [](const BBox& b) {
        return cv::Rect(cv::Point(static_cast<int>(b.x_min), static_cast<int>(b.y_min)),
                        cv::Point(static_cast<int>(b.x_max), static_cast<int>(b.y_max)));
    };
    for (const GroundTruth& g : gt) {
        cv::rectangle(mat, rect(g.box), cv::Scalar(255, 255, 255), 1);
    }
    for (const Detection& d : dets) {
        cv::rectangle(mat, rect(d.box), colour(d.class_id), 2);
        std::ostringstream label;
        label << (classes.contains(d.class_id) ? classes.name_of(d.class_id) : std::to_string(d.class_id)) << ' '
              << std::fixed << std::setprecision(2) << d.confidence;
        cv::putText(mat, label.str(), cv::Point(static_cast<int>(d.box.x_min), std::max(10, static_cast<int>(d.box.y_min) - 3)),
                    cv::FONT_HERSHEY_SIMPLEX, 0.4, colour(d.class_id), 1);
    }
    if (!cv::imwrite(path.string(), mat)) {
        throw DataError("cannot write overlay " + path.string());
    }
}

nlohmann::json to_json(const StepRecord& rec)
{
    return {{"step", rec.step},
            {"image_id", rec.image_id},
            {"box_index", rec.box_index},
            {"scale_factor", rec.scale_factor},
            {"cls", rec.loss.cls},
            {"bbox", rec.loss.bbox},
            {"tv", rec.loss.tv},
            {"color_sup", rec.loss.color_sup},
            {"total", rec.loss.total}};
}

}  // namespace tlpatch
