#pragma once

// Independent reference implementations used as test oracles, plus small
// fixture generators. Nothing here calls into the code under test except
// for value types.

#include "artshape/image.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace testing_support {

using artshape::ByteGrid;
using artshape::Grid;

// Exact Euclidean distance to the nearest background pixel by exhaustive
// search. Pixels outside the grid count as background.
inline Grid brute_edt(const ByteGrid& mask)
{
    const int h = static_cast<int>(mask.rows());
    const int w = static_cast<int>(mask.cols());
    Grid out = Grid::Zero(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (mask(y, x) == 0) {
                continue;
            }
            // Nearest virtual border pixel: straight out through the closest side.
            double best = std::min({x + 1, w - x, y + 1, h - y});
            for (int v = 0; v < h; ++v) {
                for (int u = 0; u < w; ++u) {
                    if (mask(v, u) == 0) {
                        best = std::min(best, std::hypot(double(u - x), double(v - y)));
                    }
                }
            }
            out(y, x) = best;
        }
    }
    return out;
}

// 8-connected component labelling by flood fill; returns the number of
// components and writes 1-based labels.
inline int flood_components(const ByteGrid& m, std::vector<int>& label)
{
    const int h = static_cast<int>(m.rows());
    const int w = static_cast<int>(m.cols());
    label.assign(static_cast<std::size_t>(h * w), 0);
    int n = 0;
    for (int y0 = 0; y0 < h; ++y0) {
        for (int x0 = 0; x0 < w; ++x0) {
            if (m(y0, x0) == 0 || label[y0 * w + x0] != 0) {
                continue;
            }
            ++n;
            std::vector<std::pair<int, int>> todo{{x0, y0}};
            label[y0 * w + x0] = n;
            while (!todo.empty()) {
                auto [x, y] = todo.back();
                todo.pop_back();
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = x + dx;
                        const int ny = y + dy;
                        if (nx >= 0 && ny >= 0 && nx < w && ny < h && m(ny, nx) != 0 && label[ny * w + nx] == 0) {
                            label[ny * w + nx] = n;
                            todo.emplace_back(nx, ny);
                        }
                    }
                }
            }
        }
    }
    return n;
}

inline int count_components8(const ByteGrid& m)
{
    std::vector<int> label;
    return flood_components(m, label);
}

// Largest 8-connected component; the first one in scan order wins ties.
inline ByteGrid keep_largest(const ByteGrid& m)
{
    std::vector<int> label;
    const int n = flood_components(m, label);
    std::vector<int> size(static_cast<std::size_t>(n) + 1, 0);
    for (int l : label) {
        ++size[l];
    }
    int best = 0;
    for (int c = 1; c <= n; ++c) {
        if (best == 0 || size[c] > size[best]) {
            best = c;
        }
    }
    ByteGrid out = ByteGrid::Zero(m.rows(), m.cols());
    for (int y = 0; y < m.rows(); ++y) {
        for (int x = 0; x < m.cols(); ++x) {
            out(y, x) = (best != 0 && label[y * m.cols() + x] == best) ? 1 : 0;
        }
    }
    return out;
}

// Zhang & Suen (1984) parallel thinning as published: two sub-iterations
// per pass over the P1..P9 neighbourhood
//     P9 P2 P3
//     P8 P1 P4
//     P7 P6 P5
// with the image padded by background.
inline ByteGrid zhang_suen_reference(const ByteGrid& input)
{
    const int h = static_cast<int>(input.rows());
    const int w = static_cast<int>(input.cols());
    std::vector<std::vector<int>> I(h + 2, std::vector<int>(w + 2, 0));
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            I[r + 1][c + 1] = input(r, c) != 0 ? 1 : 0;
        }
    }
    bool deleted_any = true;
    while (deleted_any) {
        deleted_any = false;
        for (int sub = 1; sub <= 2; ++sub) {
            std::vector<std::pair<int, int>> marked;
            for (int r = 1; r <= h; ++r) {
                for (int c = 1; c <= w; ++c) {
                    if (I[r][c] != 1) {
                        continue;
                    }
                    const int P2 = I[r - 1][c], P3 = I[r - 1][c + 1], P4 = I[r][c + 1], P5 = I[r + 1][c + 1];
                    const int P6 = I[r + 1][c], P7 = I[r + 1][c - 1], P8 = I[r][c - 1], P9 = I[r - 1][c - 1];
                    const int B = P2 + P3 + P4 + P5 + P6 + P7 + P8 + P9;
                    const std::array<int, 9> seq = {P2, P3, P4, P5, P6, P7, P8, P9, P2};
                    int A = 0;
                    for (int k = 0; k < 8; ++k) {
                        if (seq[k] == 0 && seq[k + 1] == 1) {
                            ++A;
                        }
                    }
                    const bool c1 = B >= 2 && B <= 6;
                    const bool c2 = A == 1;
                    const bool c3 = sub == 1 ? P2 * P4 * P6 == 0 : P2 * P4 * P8 == 0;
                    const bool c4 = sub == 1 ? P4 * P6 * P8 == 0 : P2 * P6 * P8 == 0;
                    if (c1 && c2 && c3 && c4) {
                        marked.emplace_back(r, c);
                    }
                }
            }
            for (auto [r, c] : marked) {
                I[r][c] = 0;
            }
            deleted_any = deleted_any || !marked.empty();
        }
    }
    ByteGrid out(h, w);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            out(r, c) = static_cast<std::uint8_t>(I[r + 1][c + 1]);
        }
    }
    return out;
}

// Union of a few random ellipses and rotated bars, sides in [8, max_side].
inline ByteGrid random_blob(std::mt19937_64& rng, int max_side)
{
    std::uniform_int_distribution<int> side(8, max_side);
    const int h = side(rng);
    const int w = side(rng);
    ByteGrid m = ByteGrid::Zero(h, w);
    std::uniform_int_distribution<int> count(1, 4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int n = count(rng);
    for (int k = 0; k < n; ++k) {
        const double cx = u(rng) * w;
        const double cy = u(rng) * h;
        const double a = 1.5 + u(rng) * 0.35 * w;
        const double b = 1.5 + u(rng) * 0.35 * h;
        const double th = u(rng) * std::numbers::pi;
        const bool bar = u(rng) < 0.4;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double dx = x + 0.5 - cx;
                const double dy = y + 0.5 - cy;
                const double p = std::cos(th) * dx + std::sin(th) * dy;
                const double q = -std::sin(th) * dx + std::cos(th) * dy;
                const bool in = bar ? (std::abs(p) <= a && std::abs(q) <= 0.25 * b + 0.5)
                                    : (p * p / (a * a) + q * q / (b * b) <= 1.0);
                if (in) {
                    m(y, x) = 1;
                }
            }
        }
    }
    return m;
}

// Random binary mask with foreground probability p.
inline ByteGrid random_mask(std::mt19937_64& rng, int h, int w, double p)
{
    std::bernoulli_distribution b(p);
    ByteGrid m(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            m(y, x) = b(rng) ? 1 : 0;
        }
    }
    return m;
}

// mean_i min_j D(i, j) + mean_j min_i D(i, j), evaluated term by term
// without vectorized reductions.
inline double brute_chamfer(const std::vector<std::vector<double>>& D)
{
    if (D.empty() || D[0].empty()) {
        return 0.0;
    }
    const std::size_t n = D.size();
    const std::size_t m = D[0].size();
    double a = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < m; ++j) {
            best = std::min(best, D[i][j]);
        }
        a += best;
    }
    double b = 0;
    for (std::size_t j = 0; j < m; ++j) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            best = std::min(best, D[i][j]);
        }
        b += best;
    }
    return a / static_cast<double>(n) + b / static_cast<double>(m);
}

// Fraction of signal energy at frequencies (cycles per unit) above `cutoff`,
// from a naive DFT of a Hann-windowed sequence sampled every `dt`.
inline double energy_above(const std::vector<double>& signal, double dt, double cutoff)
{
    const std::size_t n = signal.size();
    std::vector<double> x(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double hann = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * k / static_cast<double>(n - 1));
        x[k] = signal[k] * hann;
    }
    double total = 0;
    double above = 0;
    for (std::size_t f = 0; f <= n / 2; ++f) {
        std::complex<double> s = 0;
        for (std::size_t k = 0; k < n; ++k) {
            const double ang = -2.0 * std::numbers::pi * static_cast<double>(f * k % n) / static_cast<double>(n);
            s += x[k] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
        const double e = std::norm(s) * ((f == 0 || 2 * f == n) ? 1.0 : 2.0);
        total += e;
        if (static_cast<double>(f) / (static_cast<double>(n) * dt) > cutoff) {
            above += e;
        }
    }
    return total > 0 ? above / total : 0.0;
}

// Scratch directory unique to the calling test, emptied on creation.
inline std::filesystem::path scratch_dir(const std::string& name)
{
    const auto dir = std::filesystem::temp_directory_path() / ("artshape_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace testing_support
