#include "tlpatch/evaluator.hpp"

#include <algorithm>
#include <numeric>

#include "tlpatch/compositor.hpp"

namespace tlpatch {
namespace {

std::string size_bin(const BBox& box)
{
    const double w = box.width();
    if (w < 20.0) {
        return "w<20";
    }
    if (w < 30.0) {
        return "20<=w<30";
    }
    return "w>=30";
}

ApInput ap_input_for(ClassId c, std::span<const AnnotatedImage> dataset,
                     const std::vector<std::vector<Detection>>& dets)
{
    ApInput in;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        std::vector<Detection> d;
        std::copy_if(dets[i].begin(), dets[i].end(), std::back_inserter(d),
                     [c](const Detection& x) { return x.class_id == c; });
        std::vector<BBox> g;
        for (const auto& gt : dataset[i].gt) {
            if (gt.class_id == c) {
                g.push_back(gt.box);
            }
        }
        in.detections.push_back(std::move(d));
        in.ground_truth.push_back(std::move(g));
    }
    return in;
}

nlohmann::json buckets_json(const BucketCounts& b)
{
    return {{"targets", b.targets},
            {"flip", b.flip},
            {"correct", b.correct},
            {"vanish", b.vanish},
            {"other_misclass", b.other_misclass},
            {"flip_rate", b.rate(b.flip)},
            {"correct_rate", b.rate(b.correct)},
            {"vanish_rate", b.rate(b.vanish)},
            {"other_misclass_rate", b.rate(b.other_misclass)}};
}

nlohmann::json summary_json(const RunSummary& s, const ClassMap& classes)
{
    nlohmann::json ap = nlohmann::json::object();
    for (const auto& [c, v] : s.ap) {
        ap[classes.contains(c) ? classes.name_of(c) : std::to_string(c)] = v;
    }
    nlohmann::json by_size = nlohmann::json::object();
    for (const auto& [bin, b] : s.by_size) {
        by_size[bin] = buckets_json(b);
    }
    nlohmann::json j = buckets_json(s.buckets);
    j["images"] = s.images;
    j["fabrication_images"] = s.fabrication_images;
    j["fabrication_rate"] = s.fabrication_rate();
    j["ap50_11pt"] = ap;
    j["by_size"] = by_size;
    return j;
}

nlohmann::json detections_json(const std::vector<Detection>& dets)
{
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& d : dets) {
        arr.push_back({{"box", {d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max}},
                       {"confidence", d.confidence},
                       {"class_id", d.class_id}});
    }
    return arr;
}

}  // namespace

std::string to_string(Outcome o)
{
    switch (o) {
    case Outcome::flip: return "flip";
    case Outcome::correct: return "correct";
    case Outcome::vanish: return "vanish";
    case Outcome::other_misclass: return "other_misclass";
    }
    return "?";
}

Outcome classify_target(const GroundTruth& gt, ClassId target_class, std::span<const Detection> dets,
                        double match_iou)
{
    bool any = false;
    bool flip = false;
    bool correct = false;
    for (const Detection& d : dets) {
        if (iou(d.box, gt.box) < match_iou) {
            continue;
        }
        any = true;
        flip = flip || d.class_id == target_class;
        correct = correct || d.class_id == gt.class_id;
    }
    if (flip) return Outcome::flip;
    if (correct) return Outcome::correct;
    if (!any) return Outcome::vanish;
    return Outcome::other_misclass;
}

bool has_fabrication(std::span<const Detection> dets, std::span<const GroundTruth> gts, double fabrication_iou)
{
    return std::any_of(dets.begin(), dets.end(), [&](const Detection& d) {
        return std::all_of(gts.begin(), gts.end(),
                           [&](const GroundTruth& g) { return iou(d.box, g.box) < fabrication_iou; });
    });
}

std::optional<double> average_precision_11pt(const ApInput& input, double iou_threshold)
{
    long n_gt = 0;
    for (const auto& g : input.ground_truth) {
        n_gt += static_cast<long>(g.size());
    }
    if (n_gt == 0) {
        return std::nullopt;
    }
    struct Ranked {
        double confidence;
        std::size_t image;
        std::size_t det;
    };
    std::vector<Ranked> order;
    for (std::size_t i = 0; i < input.detections.size(); ++i) {
        for (std::size_t k = 0; k < input.detections[i].size(); ++k) {
            order.push_back({input.detections[i][k].confidence, i, k});
        }
    }
    std::stable_sort(order.begin(), order.end(),
                     [](const Ranked& a, const Ranked& b) { return a.confidence > b.confidence; });

    std::vector<std::vector<bool>> used(input.ground_truth.size());
    for (std::size_t i = 0; i < used.size(); ++i) {
        used[i].assign(input.ground_truth[i].size(), false);
    }
    std::vector<double> precision;
    std::vector<double> recall;
    long tp = 0;
    long fp = 0;
    for (const Ranked& r : order) {
        const BBox& box = input.detections[r.image][r.det].box;
        const auto& gts = input.ground_truth[r.image];
        double best = -1.0;
        std::size_t best_k = 0;
        for (std::size_t k = 0; k < gts.size(); ++k) {
            const double v = iou(box, gts[k]);
            if (v > best) {
                best = v;
                best_k = k;
            }
        }
        if (best >= iou_threshold && !used[r.image][best_k]) {
            used[r.image][best_k] = true;
            ++tp;
        } else {
            ++fp;
        }
        precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
        recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
    }
    double ap = 0.0;
    for (int i = 0; i <= 10; ++i) {
        const double level = i / 10.0;
        double best = 0.0;
        for (std::size_t k = 0; k < precision.size(); ++k) {
            if (recall[k] >= level) {
                best = std::max(best, precision[k]);
            }
        }
        ap += best;
    }
    return ap / 11.0;
}

void BucketCounts::add(Outcome o)
{
    ++targets;
    switch (o) {
    case Outcome::flip: ++flip; break;
    case Outcome::correct: ++correct; break;
    case Outcome::vanish: ++vanish; break;
    case Outcome::other_misclass: ++other_misclass; break;
    }
}

Image composite_under_targets(const AnnotatedImage& sample, const Patch& patch, const TargetClassMapping& m,
                              double scale)
{
    Image out = sample.image;
    for (const GroundTruth& gt : sample.gt) {
        if (!m.in_domain(gt.class_id)) {
            continue;
        }
        const auto placement = placement_for(gt.box, out.width(), out.height(), scale);
        if (!placement) {
            continue;
        }
        PatchWarp::build(patch.side(), out.width(), out.height(), *placement, TransformParams::identity())
            .composite(patch, out);
    }
    return out;
}

AttackReport evaluate(std::span<const AnnotatedImage> dataset, const DetectorAdapter& adapter, const Patch* patch,
                      const TargetClassMapping& m, const AttackConfig& cfg, const EvalOptions& options)
{
    if (dataset.empty()) {
        throw DataError("evaluate: empty dataset");
    }
    AttackReport report;
    if (patch != nullptr) {
        report.patched.emplace();
    }
    std::vector<std::vector<Detection>> clean_dets;
    std::vector<std::vector<Detection>> patched_dets;

    auto score = [&](const AnnotatedImage& sample, const std::vector<Detection>& dets, RunSummary& summary,
                     std::vector<Outcome>& outcomes, bool& fabricated, ImageRecord& record) {
        ++summary.images;
        fabricated = has_fabrication(dets, sample.gt, options.fabrication_iou);
        if (fabricated) {
            ++summary.fabrication_images;
        }
        for (int idx : record.target_indices) {
            const GroundTruth& gt = sample.gt[static_cast<std::size_t>(idx)];
            const Outcome o = classify_target(gt, m(gt.class_id), dets, options.match_iou);
            outcomes.push_back(o);
            summary.buckets.add(o);
            summary.by_size[size_bin(gt.box)].add(o);
        }
    };

    for (const AnnotatedImage& sample : dataset) {
        ImageRecord record;
        record.image_id = sample.image_id;
        for (std::size_t i = 0; i < sample.gt.size(); ++i) {
            if (m.in_domain(sample.gt[i].class_id)) {
                record.target_indices.push_back(static_cast<int>(i));
            }
        }
        record.detections_clean = adapter.detect(sample.image);
        score(sample, record.detections_clean, report.clean, record.clean, record.fabrication_clean, record);
        clean_dets.push_back(record.detections_clean);

        if (patch != nullptr) {
            const Image attacked = composite_under_targets(sample, *patch, m, cfg.eval_scale);
            record.detections_patched = adapter.detect(attacked);
            score(sample, record.detections_patched, *report.patched, record.patched, record.fabrication_patched,
                  record);
            patched_dets.push_back(record.detections_patched);
        }
        report.images.push_back(std::move(record));
    }

    for (ClassId c = 0; c < adapter.class_map().size(); ++c) {
        if (auto ap = average_precision_11pt(ap_input_for(c, dataset, clean_dets), options.match_iou)) {
            report.clean.ap[c] = *ap;
        }
        if (patch != nullptr) {
            if (auto ap = average_precision_11pt(ap_input_for(c, dataset, patched_dets), options.match_iou)) {
                report.patched->ap[c] = *ap;
            }
        }
    }
    return report;
}

nlohmann::json to_json(const AttackReport& report, const ClassMap& classes)
{
    const RunSummary& a = report.attacked();
    nlohmann::json j;
    j["n_targets"] = a.buckets.targets;
    j["flip_rate"] = a.flip_rate();
    j["vanish_rate"] = a.vanish_rate();
    j["correct_rate"] = a.correct_rate();
    j["other_misclass_rate"] = a.other_misclass_rate();
    j["fabrication_rate"] = a.fabrication_rate();
    j["clean"] = summary_json(report.clean, classes);
    j["patched"] = report.patched ? summary_json(*report.patched, classes) : nlohmann::json(nullptr);

    nlohmann::json ap_clean = nlohmann::json::object();
    nlohmann::json ap_patched = nlohmann::json::object();
    for (const auto& [c, v] : report.clean.ap) {
        ap_clean[classes.name_of(c)] = v;
    }
    if (report.patched) {
        for (const auto& [c, v] : report.patched->ap) {
            ap_patched[classes.name_of(c)] = v;
        }
    }
    j["per_class_ap_clean"] = ap_clean;
    j["per_class_ap_patched"] = report.patched ? ap_patched : nlohmann::json(nullptr);

    nlohmann::json images = nlohmann::json::array();
    for (const ImageRecord& r : report.images) {
        nlohmann::json ji;
        ji["image_id"] = r.image_id;
        ji["targets"] = r.target_indices;
        nlohmann::json clean = nlohmann::json::array();
        for (Outcome o : r.clean) clean.push_back(to_string(o));
        ji["clean"] = clean;
        ji["fabrication_clean"] = r.fabrication_clean;
        ji["detections_clean"] = detections_json(r.detections_clean);
        if (report.patched) {
            nlohmann::json patched = nlohmann::json::array();
            for (Outcome o : r.patched) patched.push_back(to_string(o));
            ji["patched"] = patched;
            ji["fabrication_patched"] = r.fabrication_patched;
            ji["detections_patched"] = detections_json(r.detections_patched);
        }
        images.push_back(std::move(ji));
    }
    j["images"] = images;
    return j;
}

}  // namespace tlpatch
