#pragma once

// Silhouette skeletonization: exact Euclidean distance transform, Zhang-Suen
// thinning, point classification and the rooted skeleton tree.

#include "artshape/errors.hpp"
#include "artshape/image.hpp"
#include "artshape/log.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <queue>
#include <stdexcept>
#include <vector>

namespace artshape {

struct Pixel {
    int x = 0;
    int y = 0;
    friend bool operator==(const Pixel&, const Pixel&) = default;
};

inline double pixel_distance(const Pixel& a, const Pixel& b)
{
    return std::hypot(static_cast<double>(a.x - b.x), static_cast<double>(a.y - b.y));
}

// 8-neighbourhood in Zhang-Suen order P2..P9: N, NE, E, SE, S, SW, W, NW.
inline constexpr std::array<std::array<int, 2>, 8> kNeighbors8 = {
    {{0, -1}, {1, -1}, {1, 0}, {1, 1}, {0, 1}, {-1, 1}, {-1, 0}, {-1, -1}}};

// ---------------------------------------------------------------------------
// Distance transform

namespace detail {

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher) on one line of
// squared distances.
inline void edt_1d(const std::vector<double>& f, std::vector<double>& d)
{
    const int n = static_cast<int>(f.size());
    std::vector<int> v(static_cast<std::size_t>(n));
    std::vector<double> z(static_cast<std::size_t>(n) + 1);
    constexpr double inf = std::numeric_limits<double>::infinity();
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] == inf) {
            continue;
        }
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -inf;
            z[1] = inf;
            continue;
        }
        double s = 0;
        while (true) {
            const int p = v[k];
            s = ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) / (2.0 * (q - p));
            if (s <= z[k] && k > 0) {
                --k;
                continue;
            }
            break;
        }
        if (s <= z[k]) {
            // k == 0 and the new parabola dominates everywhere.
            v[0] = q;
            z[0] = -inf;
            z[1] = inf;
            continue;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = inf;
    }
    d.assign(static_cast<std::size_t>(n), inf);
    if (k < 0) {
        return;
    }
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (z[j + 1] < q) {
            ++j;
        }
        const double diff = q - v[j];
        d[q] = diff * diff + f[v[j]];
    }
}

} // namespace detail

// Exact Euclidean distance from each foreground pixel to the nearest
// background pixel; pixels outside the grid count as background.
inline Grid distance_transform(const ByteGrid& mask)
{
    const int h = static_cast<int>(mask.rows());
    const int w = static_cast<int>(mask.cols());
    if (h == 0 || w == 0 || (mask.array() != 0).count() == 0) {
        throw ValidationError("distance_transform: mask has no foreground");
    }
    constexpr double inf = std::numeric_limits<double>::infinity();
    // Padded by one background pixel on every side.
    const int ph = h + 2;
    const int pw = w + 2;
    Eigen::MatrixXd sq(ph, pw);
    for (int y = 0; y < ph; ++y) {
        for (int x = 0; x < pw; ++x) {
            const bool inside = y >= 1 && y <= h && x >= 1 && x <= w;
            sq(y, x) = (inside && mask(y - 1, x - 1) != 0) ? inf : 0.0;
        }
    }
    std::vector<double> f;
    std::vector<double> d;
    for (int x = 0; x < pw; ++x) {
        f.resize(static_cast<std::size_t>(ph));
        for (int y = 0; y < ph; ++y) {
            f[y] = sq(y, x);
        }
        detail::edt_1d(f, d);
        for (int y = 0; y < ph; ++y) {
            sq(y, x) = d[y];
        }
    }
    for (int y = 0; y < ph; ++y) {
        f.resize(static_cast<std::size_t>(pw));
        for (int x = 0; x < pw; ++x) {
            f[x] = sq(y, x);
        }
        detail::edt_1d(f, d);
        for (int x = 0; x < pw; ++x) {
            sq(y, x) = d[x];
        }
    }
    Grid out(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            out(y, x) = mask(y, x) != 0 ? std::sqrt(sq(y + 1, x + 1)) : 0.0;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Connected components

// 8-connected component labels (0 = background, 1..n by scan order of first
// pixel); returns the component count.
inline int label_components(const ByteGrid& mask, Eigen::MatrixXi& labels)
{
    const int h = static_cast<int>(mask.rows());
    const int w = static_cast<int>(mask.cols());
    labels = Eigen::MatrixXi::Zero(h, w);
    int next = 0;
    std::vector<Pixel> stack;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (mask(y, x) == 0 || labels(y, x) != 0) {
                continue;
            }
            ++next;
            labels(y, x) = next;
            stack.push_back({x, y});
            while (!stack.empty()) {
                const Pixel p = stack.back();
                stack.pop_back();
                for (const auto& o : kNeighbors8) {
                    const int nx = p.x + o[0];
                    const int ny = p.y + o[1];
                    if (nx < 0 || ny < 0 || nx >= w || ny >= h || mask(ny, nx) == 0 || labels(ny, nx) != 0) {
                        continue;
                    }
                    labels(ny, nx) = next;
                    stack.push_back({nx, ny});
                }
            }
        }
    }
    return next;
}

inline int count_components(const ByteGrid& mask)
{
    Eigen::MatrixXi labels;
    return label_components(mask, labels);
}

// Largest 8-connected component (ties: the one found first in scan order).
inline ByteGrid largest_component(const ByteGrid& mask)
{
    Eigen::MatrixXi labels;
    const int n = label_components(mask, labels);
    if (n <= 1) {
        return (mask.array() != 0).cast<std::uint8_t>().matrix();
    }
    std::vector<int> sizes(static_cast<std::size_t>(n) + 1, 0);
    for (Eigen::Index k = 0; k < labels.size(); ++k) {
        ++sizes[labels(k)];
    }
    int best = 1;
    for (int c = 2; c <= n; ++c) {
        if (sizes[c] > sizes[best]) {
            best = c;
        }
    }
    return (labels.array() == best).cast<std::uint8_t>().matrix();
}

// ---------------------------------------------------------------------------
// Thinning

// Zhang-Suen parallel thinning of the largest component. Pixels outside the
// grid read as background.
inline ByteGrid thin(const ByteGrid& mask)
{
    ByteGrid img = largest_component(mask);
    const int h = static_cast<int>(img.rows());
    const int w = static_cast<int>(img.cols());
    auto at = [&](int x, int y) -> int {
        return (x < 0 || y < 0 || x >= w || y >= h) ? 0 : (img(y, x) != 0 ? 1 : 0);
    };
    std::vector<Pixel> removal;
    bool changed = true;
    while (changed) {
        changed = false;
        for (int pass = 0; pass < 2; ++pass) {
            removal.clear();
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    if (img(y, x) == 0) {
                        continue;
                    }
                    std::array<int, 8> p{};
                    for (int k = 0; k < 8; ++k) {
                        p[k] = at(x + kNeighbors8[k][0], y + kNeighbors8[k][1]);
                    }
                    const int b = p[0] + p[1] + p[2] + p[3] + p[4] + p[5] + p[6] + p[7];
                    if (b < 2 || b > 6) {
                        continue;
                    }
                    int a = 0;
                    for (int k = 0; k < 8; ++k) {
                        a += (p[k] == 0 && p[(k + 1) % 8] == 1) ? 1 : 0;
                    }
                    if (a != 1) {
                        continue;
                    }
                    // p[0]=P2 (N), p[2]=P4 (E), p[4]=P6 (S), p[6]=P8 (W)
                    const bool cond = pass == 0 ? (p[0] * p[2] * p[4] == 0 && p[2] * p[4] * p[6] == 0)
                                                : (p[0] * p[2] * p[6] == 0 && p[0] * p[4] * p[6] == 0);
                    if (cond) {
                        removal.push_back({x, y});
                    }
                }
            }
            for (const Pixel& q : removal) {
                img(q.y, q.x) = 0;
            }
            changed = changed || !removal.empty();
        }
    }
    return img;
}

// ---------------------------------------------------------------------------
// Point classification

enum class PointKind : std::uint8_t { None = 0, Endpoint, Connection, Junction };

inline int skeleton_neighbors(const ByteGrid& skel, int x, int y)
{
    const int h = static_cast<int>(skel.rows());
    const int w = static_cast<int>(skel.cols());
    int n = 0;
    for (const auto& o : kNeighbors8) {
        const int nx = x + o[0];
        const int ny = y + o[1];
        if (nx >= 0 && ny >= 0 && nx < w && ny < h && skel(ny, nx) != 0) {
            ++n;
        }
    }
    return n;
}

using KindGrid = Eigen::Matrix<PointKind, Eigen::Dynamic, Eigen::Dynamic>;

// Endpoint: one 8-neighbour; junction: three or more; connection: two.
// Isolated pixels (no neighbour) are left as None.
inline KindGrid classify_points(const ByteGrid& skeleton)
{
    KindGrid kinds = KindGrid::Constant(skeleton.rows(), skeleton.cols(), PointKind::None);
    for (int y = 0; y < skeleton.rows(); ++y) {
        for (int x = 0; x < skeleton.cols(); ++x) {
            if (skeleton(y, x) == 0) {
                continue;
            }
            const int n = skeleton_neighbors(skeleton, x, y);
            if (n == 1) {
                kinds(y, x) = PointKind::Endpoint;
            } else if (n == 2) {
                kinds(y, x) = PointKind::Connection;
            } else if (n >= 3) {
                kinds(y, x) = PointKind::Junction;
            }
        }
    }
    return kinds;
}

// ---------------------------------------------------------------------------
// Skeleton tree

enum class JointKind : std::uint8_t { Root, Junction, Endpoint };

struct Joint2D {
    int x = 0;
    int y = 0;
    double radius = 0.0;
    JointKind kind = JointKind::Junction;
};

struct Bone2D {
    int parent = -1;
    int child = -1;
    std::vector<Pixel> path; // parent pixel ... child pixel
    double mean_radius = 0.0;
};

struct SkeletonTree {
    std::vector<Joint2D> joints;
    std::vector<Bone2D> bones;
    int root = 0;

    [[nodiscard]] int parent_of(int joint) const
    {
        for (const Bone2D& b : bones) {
            if (b.child == joint) {
                return b.parent;
            }
        }
        return -1;
    }

    [[nodiscard]] std::vector<int> children_of(int joint) const
    {
        std::vector<int> out;
        for (const Bone2D& b : bones) {
            if (b.parent == joint) {
                out.push_back(b.child);
            }
        }
        return out;
    }

    [[nodiscard]] const Bone2D* bone_to(int child) const
    {
        for (const Bone2D& b : bones) {
            if (b.child == child) {
                return &b;
            }
        }
        return nullptr;
    }
};

inline double path_mean(const std::vector<Pixel>& path, const Grid& dfield)
{
    double s = 0;
    for (const Pixel& p : path) {
        s += dfield(p.y, p.x);
    }
    return path.empty() ? 0.0 : s / static_cast<double>(path.size());
}

// Sum of Euclidean steps along a pixel path.
inline double path_length(const std::vector<Pixel>& path)
{
    double len = 0;
    for (std::size_t k = 1; k < path.size(); ++k) {
        len += pixel_distance(path[k - 1], path[k]);
    }
    return len;
}

// Empty string when the tree invariants hold, else a description of the
// first violation.
inline std::string check_tree(const SkeletonTree& t, const Grid* dfield = nullptr)
{
    const int n = static_cast<int>(t.joints.size());
    if (n == 0) {
        return "no joints";
    }
    if (static_cast<int>(t.bones.size()) != n - 1) {
        return "bone count " + std::to_string(t.bones.size()) + " != joints - 1 (" + std::to_string(n - 1) + ")";
    }
    std::vector<int> parent(static_cast<std::size_t>(n), -1);
    for (const Bone2D& b : t.bones) {
        if (b.parent < 0 || b.parent >= n || b.child < 0 || b.child >= n) {
            return "bone references a missing joint";
        }
        if (b.child == t.root) {
            return "root has a parent";
        }
        if (parent[b.child] != -1) {
            return "joint " + std::to_string(b.child) + " has two parents";
        }
        parent[b.child] = b.parent;
        if (b.path.empty() || b.path.front() != Pixel{t.joints[b.parent].x, t.joints[b.parent].y} ||
            b.path.back() != Pixel{t.joints[b.child].x, t.joints[b.child].y}) {
            return "bone path does not run parent -> child";
        }
    }
    for (int j = 0; j < n; ++j) {
        // Walk up; must reach the root within n steps.
        int cur = j;
        int steps = 0;
        while (cur != t.root) {
            cur = parent[cur];
            if (cur < 0 || ++steps > n) {
                return "joint " + std::to_string(j) + " is not connected to the root";
            }
        }
        if (dfield != nullptr && std::abs(t.joints[j].radius - (*dfield)(t.joints[j].y, t.joints[j].x)) > 1e-12) {
            return "joint radius differs from the distance field";
        }
    }
    return {};
}

// Builds the rooted tree of shortest skeleton paths from the root junction to
// every endpoint. Adjacent junction pixels are contracted into one joint at
// the cluster's deepest pixel.
inline SkeletonTree build_tree(const ByteGrid& skeleton, const KindGrid& kinds, const Grid& dfield)
{
    const int h = static_cast<int>(skeleton.rows());
    const int w = static_cast<int>(skeleton.cols());
    auto idx = [w](int x, int y) { return y * w + x; };
    auto deeper = [&](const Pixel& a, const Pixel& b) {
        // a strictly preferred over b: larger distance, then scan order.
        const double da = dfield(a.y, a.x);
        const double db = dfield(b.y, b.x);
        if (da != db) {
            return da > db;
        }
        return idx(a.x, a.y) < idx(b.x, b.y);
    };

    // Junction clusters.
    std::vector<int> cluster(static_cast<std::size_t>(h) * w, -1);
    std::vector<Pixel> cluster_rep;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (kinds(y, x) != PointKind::Junction || cluster[idx(x, y)] >= 0) {
                continue;
            }
            const int c = static_cast<int>(cluster_rep.size());
            Pixel rep{x, y};
            std::vector<Pixel> stack{{x, y}};
            cluster[idx(x, y)] = c;
            while (!stack.empty()) {
                const Pixel p = stack.back();
                stack.pop_back();
                if (deeper(p, rep)) {
                    rep = p;
                }
                for (const auto& o : kNeighbors8) {
                    const int nx = p.x + o[0];
                    const int ny = p.y + o[1];
                    if (nx >= 0 && ny >= 0 && nx < w && ny < h && kinds(ny, nx) == PointKind::Junction &&
                        cluster[idx(nx, ny)] < 0) {
                        cluster[idx(nx, ny)] = c;
                        stack.push_back({nx, ny});
                    }
                }
            }
            cluster_rep.push_back(rep);
        }
    }

    // Root: deepest junction, else deepest skeleton pixel.
    bool have_root = false;
    Pixel root{};
    for (const Pixel& rep : cluster_rep) {
        if (!have_root || deeper(rep, root)) {
            root = rep;
            have_root = true;
        }
    }
    if (!have_root) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                if (skeleton(y, x) != 0 && (!have_root || deeper({x, y}, root))) {
                    root = {x, y};
                    have_root = true;
                }
            }
        }
    }
    if (!have_root) {
        throw ValidationError("build_tree: empty skeleton");
    }

    // BFS over contracted nodes. Node id = cluster id for junction pixels,
    // n_clusters + pixel index otherwise.
    const int n_clusters = static_cast<int>(cluster_rep.size());
    auto node_of = [&](int x, int y) {
        const int c = cluster[idx(x, y)];
        return c >= 0 ? c : n_clusters + idx(x, y);
    };
    auto pixel_of = [&](int node) {
        if (node < n_clusters) {
            return cluster_rep[node];
        }
        const int p = node - n_clusters;
        return Pixel{p % w, p / w};
    };
    std::vector<std::vector<Pixel>> cluster_pixels(static_cast<std::size_t>(n_clusters));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (cluster[idx(x, y)] >= 0) {
                cluster_pixels[cluster[idx(x, y)]].push_back({x, y});
            }
        }
    }
    const int n_nodes = n_clusters + h * w;
    std::vector<int> prev(static_cast<std::size_t>(n_nodes), -2);
    std::queue<int> queue;
    const int root_node = node_of(root.x, root.y);
    prev[root_node] = -1;
    queue.push(root_node);
    std::vector<int> endpoints;
    while (!queue.empty()) {
        const int node = queue.front();
        queue.pop();
        std::vector<Pixel> members;
        if (node < n_clusters) {
            members = cluster_pixels[node];
        } else {
            members.push_back(pixel_of(node));
            const Pixel p = members.front();
            if (kinds(p.y, p.x) == PointKind::Endpoint && node != root_node) {
                endpoints.push_back(node);
            }
        }
        for (const Pixel& p : members) {
            for (const auto& o : kNeighbors8) {
                const int nx = p.x + o[0];
                const int ny = p.y + o[1];
                if (nx < 0 || ny < 0 || nx >= w || ny >= h || skeleton(ny, nx) == 0) {
                    continue;
                }
                const int nb = node_of(nx, ny);
                if (prev[nb] != -2) {
                    continue;
                }
                prev[nb] = node;
                queue.push(nb);
            }
        }
    }
    std::sort(endpoints.begin(), endpoints.end());
    if (endpoints.empty()) {
        throw ValidationError("build_tree: skeleton has no endpoints (closed loop)");
    }

    SkeletonTree tree;
    std::map<int, int> joint_of_node;
    auto joint_for = [&](int node, JointKind kind) {
        auto it = joint_of_node.find(node);
        if (it != joint_of_node.end()) {
            return it->second;
        }
        const Pixel p = pixel_of(node);
        tree.joints.push_back({p.x, p.y, dfield(p.y, p.x), kind});
        const int id = static_cast<int>(tree.joints.size()) - 1;
        joint_of_node.emplace(node, id);
        return id;
    };
    tree.root = joint_for(root_node, JointKind::Root);
    std::map<std::pair<int, int>, bool> have_bone;
    for (int ep : endpoints) {
        std::vector<int> chain;
        for (int cur = ep; cur != -1; cur = prev[cur]) {
            chain.push_back(cur);
        }
        std::reverse(chain.begin(), chain.end()); // root ... endpoint
        int last_joint = tree.root;
        std::vector<Pixel> seg{pixel_of(chain.front())};
        for (std::size_t k = 1; k < chain.size(); ++k) {
            const int node = chain[k];
            const Pixel p = pixel_of(node);
            seg.push_back(p);
            const bool is_joint = node < n_clusters || k + 1 == chain.size();
            if (!is_joint) {
                continue;
            }
            const int j = joint_for(node, node < n_clusters ? JointKind::Junction : JointKind::Endpoint);
            if (!have_bone[{last_joint, j}]) {
                have_bone[{last_joint, j}] = true;
                Bone2D bone;
                bone.parent = last_joint;
                bone.child = j;
                bone.path = seg;
                bone.mean_radius = path_mean(seg, dfield);
                tree.bones.push_back(std::move(bone));
            }
            last_joint = j;
            seg.assign(1, p);
        }
    }
    return tree;
}

// Removes joints lying within the coverage radius of their parent, walking
// from the root and repeating until nothing changes. Children of a removed
// joint re-attach to its parent; bone paths concatenate.
inline SkeletonTree filter_joints(const SkeletonTree& input)
{
    SkeletonTree t = input;
    bool changed = true;
    while (changed) {
        changed = false;
        // Breadth-first order from the root.
        std::vector<int> order{t.root};
        for (std::size_t k = 0; k < order.size(); ++k) {
            for (int c : t.children_of(order[k])) {
                order.push_back(c);
            }
        }
        for (int j : order) {
            if (j == t.root) {
                continue;
            }
            const int p = t.parent_of(j);
            const Joint2D& pj = t.joints[p];
            const Joint2D& cj = t.joints[j];
            if (pixel_distance({pj.x, pj.y}, {cj.x, cj.y}) >= pj.radius) {
                continue;
            }
            // Splice j out. Path means combine exactly: j's pixel is shared by
            // both segments.
            auto up = std::find_if(t.bones.begin(), t.bones.end(), [j](const Bone2D& b) { return b.child == j; });
            const std::vector<Pixel> head = up->path;
            const double head_mean = up->mean_radius;
            const double shared = cj.radius;
            t.bones.erase(up);
            for (Bone2D& b : t.bones) {
                if (b.parent == j) {
                    const double nh = static_cast<double>(head.size());
                    const double nb = static_cast<double>(b.path.size());
                    b.mean_radius = (head_mean * nh + b.mean_radius * nb - shared) / (nh + nb - 1.0);
                    std::vector<Pixel> path = head;
                    path.insert(path.end(), b.path.begin() + 1, b.path.end());
                    b.path = std::move(path);
                    b.parent = p;
                }
            }
            // Compact joint indices.
            t.joints.erase(t.joints.begin() + j);
            auto shift = [j](int& id) {
                if (id > j) {
                    --id;
                }
            };
            for (Bone2D& b : t.bones) {
                shift(b.parent);
                shift(b.child);
            }
            shift(t.root);
            changed = true;
            break;
        }
    }
    return t;
}

} // namespace artshape
