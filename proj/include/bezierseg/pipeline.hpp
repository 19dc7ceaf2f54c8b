#pragma once

// Segment-then-refit over one point cloud, producing per-point labels and
// normals plus one refit per region.

#include <optional>
#include <vector>

#include "bezierseg/bezier.hpp"
#include "bezierseg/fitting.hpp"
#include "bezierseg/metrics.hpp"

namespace bezierseg {

struct PipelineOptions {
    RegionGrowParams region{};
    RefitOptions refit{};
};

struct PipelineResult {
    std::vector<int> labels;
    std::vector<PatchRefit> refits;
    Matrix uv;       // per point, from its region's final fit
    Matrix normals;  // per point: fitted patch normal, PCA estimate where undefined
    std::vector<int> types;  // degree class per label, -1 when the fit failed

    [[nodiscard]] int fitted_count() const {
        int n = 0;
        for (const auto& r : refits) n += r.fit.has_value();
        return n;
    }

    [[nodiscard]] Segmentation segmentation() const { return {labels, types, normals}; }
};

/// Runs region growing (unless labels are given) and refits every region.
inline PipelineResult segment_and_refit(const Matrix& coords, const PipelineOptions& opt = {},
                                        const std::optional<std::vector<int>>& given_labels = std::nullopt) {
    const NeighborGraph graph = knn(coords, opt.region.neighbors);
    const Matrix estimated = estimate_normals(coords, graph);

    PipelineResult res;
    if (given_labels) {
        res.labels = *given_labels;
    } else {
        RegionGrowParams rg = opt.region;
        rg.use_given_normals = true;
        res.labels = region_grow(coords, estimated, rg);
    }
    res.refits = refit_model(coords, res.labels, opt.refit);

    res.uv = Matrix::Zero(coords.rows(), 2);
    res.normals = estimated;
    res.types.assign(res.refits.size(), -1);
    const DegreeLayout layout = opt.refit.layout;
    for (const auto& r : res.refits) {
        if (!r.fit) continue;
        res.types[static_cast<std::size_t>(r.label)] = layout.class_index(r.fit->patch.degree);
        for (std::size_t i = 0; i < r.indices.size(); ++i) {
            const auto p = static_cast<Eigen::Index>(r.indices[i]);
            const auto row = static_cast<Eigen::Index>(i);
            res.uv.row(p) = r.uv.row(row);
            try {
                res.normals.row(p) = patch_normal(r.fit->patch, {r.uv(row, 0), r.uv(row, 1)}).transpose();
            } catch (const DegenerateNormalError&) {
                // keep the PCA estimate
            }
        }
    }
    return res;
}

}  // namespace bezierseg
