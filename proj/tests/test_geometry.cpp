#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "detnet/geometry.hpp"
#include "detnet/rng.hpp"

using namespace detnet;

namespace {

// Corner-form IoU computed independently of the library's center-form path.
double oracle_iou(const Box& a, const Box& b) {
  const double ax0 = a.x - a.w / 2.0, ax1 = a.x + a.w / 2.0;
  const double ay0 = a.y - a.h / 2.0, ay1 = a.y + a.h / 2.0;
  const double bx0 = b.x - b.w / 2.0, bx1 = b.x + b.w / 2.0;
  const double by0 = b.y - b.h / 2.0, by1 = b.y + b.h / 2.0;
  const double iw = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
  const double ih = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
  const double inter = iw * ih;
  const double area_a = std::max(0.0, double(a.w)) * std::max(0.0, double(a.h));
  const double area_b = std::max(0.0, double(b.w)) * std::max(0.0, double(b.h));
  const double uni = area_a + area_b - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace

TEST_CASE("iou matches hand-computed overlaps") {
  // Unit squares offset by one: intersection 1x2? No: A center (1,1) 2x2 spans
  // [0,2]x[0,2]; B center (2,1) 2x2 spans [1,3]x[0,2]. Overlap 1x2=2, union
  // 4+4-2=6 -> 1/3.
  Box a{1.f, 1.f, 2.f, 2.f};
  Box b{2.f, 1.f, 2.f, 2.f};
  CHECK(iou(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
  CHECK(iou(a, a) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(iou(a, Box{10.f, 10.f, 2.f, 2.f}) == 0.f);
  // Containment: 2x2 inside 4x4 sharing a center -> 4/16.
  CHECK(iou(Box{0.f, 0.f, 2.f, 2.f}, Box{0.f, 0.f, 4.f, 4.f}) ==
        doctest::Approx(0.25).epsilon(1e-6));
  // Degenerate extents contribute no area.
  CHECK(iou(Box{0.f, 0.f, 0.f, 5.f}, Box{0.f, 0.f, 4.f, 4.f}) == 0.f);
}

TEST_CASE("iou is symmetric and translation invariant") {
  Rng rng(41);
  for (int i = 0; i < 500; ++i) {
    Box a{float(rng.uniform(-20, 20)), float(rng.uniform(-20, 20)),
          float(rng.uniform(0.5, 15)), float(rng.uniform(0.5, 15))};
    Box b{float(rng.uniform(-20, 20)), float(rng.uniform(-20, 20)),
          float(rng.uniform(0.5, 15)), float(rng.uniform(0.5, 15))};
    const float ab = iou(a, b);
    CHECK(ab == iou(b, a));
    CHECK(ab == doctest::Approx(oracle_iou(a, b)).epsilon(1e-5));
    CHECK(ab >= 0.f);
    CHECK(ab <= 1.f);
    const float dx = float(rng.uniform(-30, 30)), dy = float(rng.uniform(-30, 30));
    Box at{a.x + dx, a.y + dy, a.w, a.h};
    Box bt{b.x + dx, b.y + dy, b.w, b.h};
    CHECK(iou(at, bt) == doctest::Approx(ab).epsilon(1e-4));
  }
}

TEST_CASE("shape iou ignores position") {
  CHECK(shape_iou(2.f, 2.f, 2.f, 2.f) == doctest::Approx(1.0));
  // Co-centered 2x2 vs 4x4 -> 4/16.
  CHECK(shape_iou(2.f, 2.f, 4.f, 4.f) == doctest::Approx(0.25).epsilon(1e-6));
  CHECK(shape_iou(1.f, 4.f, 4.f, 1.f) ==
        doctest::Approx(1.0 / 7.0).epsilon(1e-6));  // overlap 1, union 4+4-1
  Rng rng(43);
  for (int i = 0; i < 200; ++i) {
    const float aw = float(rng.uniform(0.5, 12)), ah = float(rng.uniform(0.5, 12));
    const float bw = float(rng.uniform(0.5, 12)), bh = float(rng.uniform(0.5, 12));
    CHECK(shape_iou(aw, ah, bw, bh) ==
          doctest::Approx(iou(Box{0, 0, aw, ah}, Box{0, 0, bw, bh})).epsilon(1e-6));
  }
}

TEST_CASE("cell index floors pixel coordinates by stride") {
  CHECK(cell_index(0.f, 8.f) == 0);
  CHECK(cell_index(7.99f, 8.f) == 0);
  CHECK(cell_index(8.f, 8.f) == 1);
  CHECK(cell_index(17.f, 8.f) == 2);
  CHECK(cell_index(5.f, 1.f) == 5);
}

TEST_CASE("zero offsets decode to the cell center scaled prior") {
  // tx=ty=0 squashes to 0.5, so the center sits mid-cell; tw=th=0 keeps the
  // prior extents (cell units -> pixels via stride).
  AnchorPrior prior{2.f, 1.5f};
  Box b = decode_box(RawBox{}, 0, 0, 8.f, prior);
  CHECK(b.x == doctest::Approx(4.0).epsilon(1e-6));
  CHECK(b.y == doctest::Approx(4.0).epsilon(1e-6));
  CHECK(b.w == doctest::Approx(16.0).epsilon(1e-6));
  CHECK(b.h == doctest::Approx(12.0).epsilon(1e-6));

  Box c = decode_box(RawBox{}, 3, 2, 4.f, prior);
  CHECK(c.x == doctest::Approx((3 + 0.5) * 4).epsilon(1e-6));
  CHECK(c.y == doctest::Approx((2 + 0.5) * 4).epsilon(1e-6));
}

TEST_CASE("decode matches high-precision reference values") {
  // sigmoid(0.2)=0.549833997..., sigmoid(-0.3)=0.425557483...,
  // 2*exp(0.5)=3.297442541..., 1.5*exp(-0.5)=0.909795989... (cell units).
  RawBox t{0.2f, -0.3f, 0.5f, -0.5f};
  AnchorPrior prior{2.f, 1.5f};
  const float stride = 8.f;
  Box b = decode_box(t, 3, 4, stride, prior);
  CHECK(b.x == doctest::Approx((3.0 + 0.5498339973124778) * 8).epsilon(1e-6));
  CHECK(b.y == doctest::Approx((4.0 + 0.4255574831883411) * 8).epsilon(1e-6));
  CHECK(b.w == doctest::Approx(3.2974425414002564 * 8).epsilon(1e-6));
  CHECK(b.h == doctest::Approx(0.9097959895689501 * 8).epsilon(1e-6));
}

TEST_CASE("decoded centers stay confined to their cell") {
  // The squash keeps the fractional offset in (0,1), so no offset, however
  // extreme, can push the center outside the owning cell.
  Rng rng(47);
  const float stride = 8.f;
  for (int i = 0; i < 100000; ++i) {
    RawBox t{float(rng.uniform(-12, 12)), float(rng.uniform(-12, 12)),
             float(rng.uniform(-4, 4)), float(rng.uniform(-4, 4))};
    const int cx = rng.uniform_int(0, 12), cy = rng.uniform_int(0, 12);
    AnchorPrior prior{float(rng.uniform(0.3, 6)), float(rng.uniform(0.3, 6))};
    Box b = decode_box(t, cx, cy, stride, prior);
    CHECK(b.x >= cx * stride);
    CHECK(b.x <= (cx + 1) * stride);
    CHECK(b.y >= cy * stride);
    CHECK(b.y <= (cy + 1) * stride);
    CHECK(b.w > 0.f);
    CHECK(b.h > 0.f);
  }
}

TEST_CASE("encode inverts decode") {
  Rng rng(53);
  const float stride = 8.f;
  for (int i = 0; i < 2000; ++i) {
    // Stay a few percent inside the cell so the float logit round-trips well.
    const int cx = rng.uniform_int(0, 7), cy = rng.uniform_int(0, 7);
    AnchorPrior prior{float(rng.uniform(0.5, 5)), float(rng.uniform(0.5, 5))};
    Box b;
    b.x = (cx + float(rng.uniform(0.03, 0.97))) * stride;
    b.y = (cy + float(rng.uniform(0.03, 0.97))) * stride;
    b.w = prior.w * stride * float(std::exp(rng.uniform(-1.5, 1.5)));
    b.h = prior.h * stride * float(std::exp(rng.uniform(-1.5, 1.5)));
    RawBox t = encode_box(b, cx, cy, stride, prior);
    Box back = decode_box(t, cx, cy, stride, prior);
    CHECK(back.x == doctest::Approx(b.x).epsilon(1e-5));
    CHECK(back.y == doctest::Approx(b.y).epsilon(1e-5));
    CHECK(back.w == doctest::Approx(b.w).epsilon(1e-5));
    CHECK(back.h == doctest::Approx(b.h).epsilon(1e-5));
  }

  SUBCASE("zero offsets are a fixed point") {
    AnchorPrior prior{2.f, 3.f};
    Box mid{(5 + 0.5f) * 8, (1 + 0.5f) * 8, 16.f, 24.f};
    RawBox t = encode_box(mid, 5, 1, 8.f, prior);
    CHECK(t.tx == doctest::Approx(0.0).epsilon(1e-5));
    CHECK(t.ty == doctest::Approx(0.0).epsilon(1e-5));
    CHECK(t.tw == doctest::Approx(0.0).epsilon(1e-5));
    CHECK(t.th == doctest::Approx(0.0).epsilon(1e-5));
  }

  SUBCASE("centers on the cell border stay finite") {
    AnchorPrior prior{2.f, 2.f};
    Box edge{8.f * 3, 8.f * 2, 10.f, 10.f};  // exactly on the lower border
    RawBox t = encode_box(edge, 3, 2, 8.f, prior);
    CHECK(std::isfinite(t.tx));
    CHECK(std::isfinite(t.ty));
    Box back = decode_box(t, 3, 2, 8.f, prior);
    CHECK(back.x == doctest::Approx(edge.x).epsilon(1e-2));
  }
}

TEST_CASE("grid decode reads the anchor channel blocks") {
  // One batch item, 2 anchors, 1 class, 2x2 grid: plant a strong logit in one
  // slot and check the decoded detection lands in the right cell with the
  // right prior.
  const int K = 2, C = 1, H = 2, W = 2;
  Tensor head({1, K * (5 + C), H, W});
  std::vector<AnchorPrior> anchors{{1.f, 1.f}, {3.f, 2.f}};
  // Anchor 1, cell (1, 0): tobj large, offsets zero.
  auto at = [&](int ch, int y, int x) -> float& {
    return head[std::int64_t(ch) * H * W + y * W + x];
  };
  at(1 * 6 + 4, 0, 1) = 6.f;  // objectness logit
  at(1 * 6 + 5, 0, 1) = 1.f;  // class logit
  // Every unplanted slot squashes to exactly 0.5, so threshold above it.
  auto dets = decode_grid(head, 0, anchors, C, 8.f, 0.6f);
  REQUIRE(dets.size() == 1);
  CHECK(dets[0].score == doctest::Approx(1.0 / (1.0 + std::exp(-6.0))).epsilon(1e-6));
  CHECK(dets[0].class_id == 0);
  CHECK(dets[0].box.x == doctest::Approx((1 + 0.5) * 8).epsilon(1e-5));
  CHECK(dets[0].box.y == doctest::Approx((0 + 0.5) * 8).epsilon(1e-5));
  CHECK(dets[0].box.w == doctest::Approx(3 * 8).epsilon(1e-5));
  CHECK(dets[0].box.h == doctest::Approx(2 * 8).epsilon(1e-5));

  SUBCASE("threshold drops weak slots") {
    CHECK(decode_grid(head, 0, anchors, C, 8.f, 0.999f).empty());
  }
}

TEST_CASE("nms keeps the best box per overlapping cluster") {
  std::vector<Detection> dets;
  dets.push_back({Box{10.f, 10.f, 8.f, 8.f}, 0.9f, 0});
  dets.push_back({Box{11.f, 10.f, 8.f, 8.f}, 0.8f, 0});   // heavy overlap, dropped
  dets.push_back({Box{40.f, 40.f, 8.f, 8.f}, 0.7f, 0});   // far away, kept
  dets.push_back({Box{10.f, 10.f, 8.f, 8.f}, 0.85f, 1});  // other class, kept
  auto kept = nms(dets, 0.45f);
  REQUIRE(kept.size() == 3);
  CHECK(kept[0].score == 0.9f);
  CHECK(kept[1].score == 0.85f);
  CHECK(kept[2].score == 0.7f);

  SUBCASE("identical boxes collapse to the top score") {
    std::vector<Detection> same;
    for (int i = 0; i < 5; ++i)
      same.push_back({Box{5.f, 5.f, 4.f, 4.f}, 0.5f + 0.1f * i, 0});
    auto out = nms(same, 0.45f);
    REQUIRE(out.size() == 1);
    CHECK(out[0].score == doctest::Approx(0.9f));
  }

  SUBCASE("score threshold filters before suppression") {
    auto out = nms(dets, 0.45f, 0.75f);
    REQUIRE(out.size() == 2);  // 0.9 and 0.85 survive, 0.8 suppressed by 0.9
  }
}

TEST_CASE("nms agrees with a brute-force oracle") {
  Rng rng(59);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Detection> dets;
    const int n = rng.uniform_int(0, 25);
    for (int i = 0; i < n; ++i) {
      Detection d;
      d.box = Box{float(rng.uniform(0, 50)), float(rng.uniform(0, 50)),
                  float(rng.uniform(2, 20)), float(rng.uniform(2, 20))};
      d.score = float(rng.uniform(0.01, 1.0));
      d.class_id = rng.uniform_int(0, 1);
      dets.push_back(d);
    }
    const float thresh = 0.5f;

    // Oracle: sort by descending score (stable on index), then greedily keep.
    std::vector<int> order(dets.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[int(i)] = int(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return dets[a].score > dets[b].score; });
    std::vector<int> kept_idx;
    for (int i : order) {
      bool keep = true;
      for (int j : kept_idx)
        if (dets[j].class_id == dets[i].class_id &&
            oracle_iou(dets[j].box, dets[i].box) >= thresh) {
          keep = false;
          break;
        }
      if (keep) kept_idx.push_back(i);
    }

    auto got = nms(dets, thresh);
    REQUIRE(got.size() == kept_idx.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].score == dets[kept_idx[i]].score);
      CHECK(got[i].class_id == dets[kept_idx[i]].class_id);
    }
  }
}
