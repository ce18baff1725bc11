#pragma once

// Orientation and in-circle tests on double coordinates.
//
// Each predicate first evaluates in floating point and accepts the sign when
// the magnitude clears a forward error bound; otherwise it re-evaluates with
// exact rational arithmetic. Every double is a dyadic rational, so the exact
// path returns the true sign of the determinant.

#include <boost/multiprecision/cpp_int.hpp>

#include <cmath>
#include <limits>

namespace slidegraph {

struct Point {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point&, const Point&) = default;
};

inline bool lex_less(const Point& a, const Point& b) {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
}

inline double distance(const Point& a, const Point& b) {
    return std::hypot(a.x - b.x, a.y - b.y);
}

namespace detail {

using exact_t = boost::multiprecision::cpp_rational;

inline constexpr double kEps = std::numeric_limits<double>::epsilon() / 2.0;
inline constexpr double kOrientBound = (3.0 + 16.0 * kEps) * kEps;
inline constexpr double kInCircleBound = (10.0 + 96.0 * kEps) * kEps;

inline int sign_of(const exact_t& v) {
    return v.sign();
}

inline int orient_exact(const Point& a, const Point& b, const Point& c) {
    const exact_t acx = exact_t(a.x) - exact_t(c.x);
    const exact_t bcx = exact_t(b.x) - exact_t(c.x);
    const exact_t acy = exact_t(a.y) - exact_t(c.y);
    const exact_t bcy = exact_t(b.y) - exact_t(c.y);
    return sign_of(acx * bcy - acy * bcx);
}

inline int incircle_exact(const Point& a, const Point& b, const Point& c, const Point& d) {
    const exact_t adx = exact_t(a.x) - exact_t(d.x), ady = exact_t(a.y) - exact_t(d.y);
    const exact_t bdx = exact_t(b.x) - exact_t(d.x), bdy = exact_t(b.y) - exact_t(d.y);
    const exact_t cdx = exact_t(c.x) - exact_t(d.x), cdy = exact_t(c.y) - exact_t(d.y);
    const exact_t alift = adx * adx + ady * ady;
    const exact_t blift = bdx * bdx + bdy * bdy;
    const exact_t clift = cdx * cdx + cdy * cdy;
    const exact_t det = alift * (bdx * cdy - cdx * bdy) + blift * (cdx * ady - adx * cdy) +
                        clift * (adx * bdy - bdx * ady);
    return sign_of(det);
}

} // namespace detail

/// Sign of the signed area of triangle (a, b, c): +1 counter-clockwise,
/// -1 clockwise, 0 collinear.
inline int orient2d(const Point& a, const Point& b, const Point& c) {
    const double detleft = (a.x - c.x) * (b.y - c.y);
    const double detright = (a.y - c.y) * (b.x - c.x);
    const double det = detleft - detright;
    const double detsum = std::abs(detleft) + std::abs(detright);
    if (std::abs(det) > detail::kOrientBound * detsum) {
        return det > 0 ? 1 : -1;
    }
    return detail::orient_exact(a, b, c);
}

/// +1 if d lies strictly inside the circle through a, b, c (given
/// counter-clockwise), -1 if strictly outside, 0 if cocircular.
inline int incircle(const Point& a, const Point& b, const Point& c, const Point& d) {
    const double adx = a.x - d.x, ady = a.y - d.y;
    const double bdx = b.x - d.x, bdy = b.y - d.y;
    const double cdx = c.x - d.x, cdy = c.y - d.y;

    const double bdxcdy = bdx * cdy, cdxbdy = cdx * bdy;
    const double alift = adx * adx + ady * ady;
    const double cdxady = cdx * ady, adxcdy = adx * cdy;
    const double blift = bdx * bdx + bdy * bdy;
    const double adxbdy = adx * bdy, bdxady = bdx * ady;
    const double clift = cdx * cdx + cdy * cdy;

    const double det = alift * (bdxcdy - cdxbdy) + blift * (cdxady - adxcdy) + clift * (adxbdy - bdxady);
    const double permanent = (std::abs(bdxcdy) + std::abs(cdxbdy)) * alift +
                             (std::abs(cdxady) + std::abs(adxcdy)) * blift +
                             (std::abs(adxbdy) + std::abs(bdxady)) * clift;
    if (std::abs(det) > detail::kInCircleBound * permanent) {
        return det > 0 ? 1 : -1;
    }
    return detail::incircle_exact(a, b, c, d);
}

namespace detail {

// c lies on the closed segment [a, b], given orient(a, b, c) == 0.
inline bool on_collinear_segment(const Point& a, const Point& b, const Point& c) {
    return std::min(a.x, b.x) <= c.x && c.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= c.y &&
           c.y <= std::max(a.y, b.y);
}

} // namespace detail

/// True when segments [p1,p2] and [q1,q2] share any point that is not an
/// endpoint of both. Segments meeting only at a common endpoint do not
/// conflict; crossings, T-junctions and collinear overlaps do.
inline bool segments_conflict(const Point& p1, const Point& p2, const Point& q1, const Point& q2) {
    const int o1 = orient2d(p1, p2, q1);
    const int o2 = orient2d(p1, p2, q2);
    const int o3 = orient2d(q1, q2, p1);
    const int o4 = orient2d(q1, q2, p2);

    if (o1 * o2 < 0 && o3 * o4 < 0) {
        return true;
    }

    const auto shared = [&](const Point& v) { return (v == p1 || v == p2) && (v == q1 || v == q2); };

    if (o1 == 0 && o2 == 0 && o3 == 0 && o4 == 0) {
        // Collinear (or degenerate) pair: compare along the dominant axis.
        const bool use_x = std::abs(p2.x - p1.x) + std::abs(q2.x - q1.x) >= std::abs(p2.y - p1.y) + std::abs(q2.y - q1.y);
        const auto key = [use_x](const Point& v) { return use_x ? v.x : v.y; };
        const double lo = std::max(std::min(key(p1), key(p2)), std::min(key(q1), key(q2)));
        const double hi = std::min(std::max(key(p1), key(p2)), std::max(key(q1), key(q2)));
        if (lo > hi) {
            return false;
        }
        if (lo < hi) {
            return true;
        }
        // Single touching point; it is an endpoint of each segment.
        for (const Point& v : {p1, p2}) {
            if (key(v) == lo && (v == q1 || v == q2)) {
                return !shared(v);
            }
        }
        return true;
    }

    if (o1 == 0 && detail::on_collinear_segment(p1, p2, q1) && !shared(q1)) {
        return true;
    }
    if (o2 == 0 && detail::on_collinear_segment(p1, p2, q2) && !shared(q2)) {
        return true;
    }
    if (o3 == 0 && detail::on_collinear_segment(q1, q2, p1) && !shared(p1)) {
        return true;
    }
    if (o4 == 0 && detail::on_collinear_segment(q1, q2, p2) && !shared(p2)) {
        return true;
    }
    return false;
}

} // namespace slidegraph
