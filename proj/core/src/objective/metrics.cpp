#include "unetr/objective/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "unetr/error.hpp"

namespace unetr {

namespace {

double squared_distance(const Point3& a, const Point3& b)
{
    const double dx = a[0] - b[0];
    const double dy = a[1] - b[1];
    const double dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

// Static 3-d tree over a point set, split on the widest axis at the median.
class KdTree {
public:
    explicit KdTree(const SurfacePoints& points) : points_(points), order_(points.size())
    {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        nodes_.reserve(points.size());
        if (!points.empty())
            build(0, points.size());
    }

    double nearest_squared(const Point3& q) const
    {
        double best = std::numeric_limits<double>::infinity();
        if (!nodes_.empty())
            search(0, q, best);
        return best;
    }

private:
    struct Node {
        std::size_t point;
        std::size_t axis;
        std::size_t left = kNone;
        std::size_t right = kNone;
    };
    static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

    std::size_t build(std::size_t begin, std::size_t end)
    {
        Point3 lo{}, hi{};
        lo.fill(std::numeric_limits<double>::infinity());
        hi.fill(-std::numeric_limits<double>::infinity());
        for (std::size_t i = begin; i < end; ++i)
            for (std::size_t a = 0; a < 3; ++a) {
                lo[a] = std::min(lo[a], points_[order_[i]][a]);
                hi[a] = std::max(hi[a], points_[order_[i]][a]);
            }
        std::size_t axis = 0;
        for (std::size_t a = 1; a < 3; ++a)
            if (hi[a] - lo[a] > hi[axis] - lo[axis])
                axis = a;
        const std::size_t mid = begin + (end - begin) / 2;
        std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                         order_.begin() + static_cast<std::ptrdiff_t>(mid),
                         order_.begin() + static_cast<std::ptrdiff_t>(end),
                         [&](std::size_t x, std::size_t y) { return points_[x][axis] < points_[y][axis]; });
        const std::size_t id = nodes_.size();
        nodes_.push_back({order_[mid], axis});
        if (mid > begin) {
            const std::size_t left = build(begin, mid);
            nodes_[id].left = left;
        }
        if (mid + 1 < end) {
            const std::size_t right = build(mid + 1, end);
            nodes_[id].right = right;
        }
        return id;
    }

    void search(std::size_t id, const Point3& q, double& best) const
    {
        const Node& n = nodes_[id];
        const Point3& p = points_[n.point];
        best = std::min(best, squared_distance(p, q));
        const double diff = q[n.axis] - p[n.axis];
        const std::size_t near = diff < 0 ? n.left : n.right;
        const std::size_t far = diff < 0 ? n.right : n.left;
        if (near != kNone)
            search(near, q, best);
        if (far != kNone && diff * diff < best)
            search(far, q, best);
    }

    const SurfacePoints& points_;
    std::vector<std::size_t> order_;
    std::vector<Node> nodes_;
};

} // namespace

double dice_score(std::span<const std::uint8_t> truth, std::span<const std::uint8_t> pred)
{
    if (truth.size() != pred.size())
        throw ShapeError("dice_score: mask sizes " + std::to_string(truth.size()) + " and " +
                         std::to_string(pred.size()) + " differ");
    std::size_t g = 0, p = 0, both = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const bool gi = truth[i] != 0;
        const bool pi = pred[i] != 0;
        g += gi;
        p += pi;
        both += gi && pi;
    }
    if (g + p == 0)
        return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(g + p);
}

SurfacePoints extract_surface(std::span<const std::uint8_t> mask, const Dims3& dims, const Spacing& spacing)
{
    if (mask.size() != voxel_count(dims))
        throw ShapeError("extract_surface: mask of " + std::to_string(mask.size()) + " voxels for grid " +
                         to_string(dims));
    const auto [h, w, d] = dims;
    auto inside = [&](std::size_t x, std::size_t y, std::size_t z) { return mask[(x * w + y) * d + z] != 0; };
    SurfacePoints points;
    for (std::size_t x = 0; x < h; ++x)
        for (std::size_t y = 0; y < w; ++y)
            for (std::size_t z = 0; z < d; ++z) {
                if (!inside(x, y, z))
                    continue;
                const bool border = x == 0 || y == 0 || z == 0 || x + 1 == h || y + 1 == w || z + 1 == d;
                if (border || !inside(x - 1, y, z) || !inside(x + 1, y, z) || !inside(x, y - 1, z) ||
                    !inside(x, y + 1, z) || !inside(x, y, z - 1) || !inside(x, y, z + 1))
                    points.push_back({static_cast<double>(x) * spacing[0], static_cast<double>(y) * spacing[1],
                                      static_cast<double>(z) * spacing[2]});
            }
    return points;
}

std::vector<double> directed_distances(const SurfacePoints& from, const SurfacePoints& to)
{
    const KdTree tree(to);
    std::vector<double> out;
    out.reserve(from.size());
    for (const auto& p : from)
        out.push_back(std::sqrt(tree.nearest_squared(p)));
    std::sort(out.begin(), out.end());
    return out;
}

double nearest_rank(std::span<const double> sorted, double q)
{
    if (sorted.empty())
        throw ShapeError("nearest_rank: empty list");
    const auto m = static_cast<double>(sorted.size());
    auto rank = static_cast<std::size_t>(std::ceil(q * m - 1e-9));
    rank = std::clamp<std::size_t>(rank, 1, sorted.size());
    return sorted[rank - 1];
}

std::optional<double> hd95(const SurfacePoints& a, const SurfacePoints& b)
{
    if (a.empty() || b.empty())
        return std::nullopt;
    return std::max(nearest_rank(directed_distances(a, b), 0.95), nearest_rank(directed_distances(b, a), 0.95));
}

std::optional<double> hausdorff(const SurfacePoints& a, const SurfacePoints& b)
{
    if (a.empty() || b.empty())
        return std::nullopt;
    return std::max(directed_distances(a, b).back(), directed_distances(b, a).back());
}

std::vector<std::uint8_t> class_mask(std::span<const std::uint8_t> labels, std::uint8_t cls)
{
    std::vector<std::uint8_t> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i)
        out[i] = labels[i] == cls ? 1 : 0;
    return out;
}

} // namespace unetr
