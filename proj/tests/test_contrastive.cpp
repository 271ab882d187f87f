#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <deque>
#include <vector>

#include "labelcl/contrastive.hpp"
#include "labelcl/gradcheck.hpp"

using namespace labelcl;

namespace {

ProjectedBatch<double> make_batch(int64_t n, int64_t num_classes, int64_t dim, RngState& rng,
                                  double activation_rate = 0.5) {
    ProjectedBatch<double> b;
    b.n = n;
    b.num_classes = num_classes;
    Tensor<double> x({n * num_classes, dim});
    for (auto& v : x.data) v = rng.normal();
    b.x = constant(std::move(x));
    b.y.resize(static_cast<size_t>(n * num_classes));
    for (auto& v : b.y) v = rng.uniform() < activation_rate ? 1 : 0;
    for (int64_t i = 0; i < n; ++i) b.image_ids.push_back(100 + i);
    return b;
}

double stable_lse(const std::vector<double>& vals) {
    double mx = *std::max_element(vals.begin(), vals.end());
    double sum = 0.0;
    for (double v : vals) sum += std::exp(v - mx);
    return mx + std::log(sum);
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

std::vector<double> batch_row(const ProjectedBatch<double>& b, int64_t row) {
    std::vector<double> out(static_cast<size_t>(b.x->value.cols()));
    for (int64_t c = 0; c < b.x->value.cols(); ++c) out[static_cast<size_t>(c)] = b.x->value.at(row, c);
    return out;
}

// Literal double-loop restatement of the sample-to-sample loss definition.
double naive_sscl(const ProjectedBatch<double>& b, const std::vector<SnapshotEntry<double>>& snap,
                  double tau) {
    struct Item {
        std::vector<double> vec;
        int64_t cls;
        bool from_batch;
    };
    std::vector<Item> items;
    for (int64_t r = 0; r < b.x->value.rows(); ++r)
        if (b.y[static_cast<size_t>(r)]) items.push_back({batch_row(b, r), r % b.num_classes, true});
    for (const auto& e : snap) items.push_back({e.vec, e.cls, false});

    double total = 0.0;
    for (size_t a = 0; a < items.size(); ++a) {
        if (!items[a].from_batch) continue;
        std::vector<double> den;
        std::vector<size_t> pos;
        for (size_t o = 0; o < items.size(); ++o) {
            if (o == a) continue;
            den.push_back(dot(items[a].vec, items[o].vec) / tau);
            if (items[o].cls == items[a].cls) pos.push_back(den.size() - 1);
        }
        if (pos.empty()) continue;
        const double lse = stable_lse(den);
        double acc = 0.0;
        for (size_t p : pos) acc += den[p] - lse;
        total += -acc / static_cast<double>(pos.size());
    }
    return total;
}

// Literal restatement of the prototype-to-sample loss definition.
double naive_pscl(const std::vector<std::vector<double>>& protos, const std::vector<int64_t>& classes,
                  const ProjectedBatch<double>& b, const std::vector<SnapshotEntry<double>>& snap,
                  double tau) {
    double total = 0.0;
    for (size_t r = 0; r < protos.size(); ++r) {
        const int64_t cls = classes[r];
        std::vector<double> pos, den;
        for (int64_t i = 0; i < b.n; ++i) {
            const int64_t row = i * b.num_classes + cls;
            const double s = dot(protos[r], batch_row(b, row)) / tau;
            den.push_back(s);
            if (b.y[static_cast<size_t>(row)]) pos.push_back(s);
        }
        for (const auto& e : snap) {
            if (e.cls != cls) continue;
            const double s = dot(protos[r], e.vec) / tau;
            den.push_back(s);
            pos.push_back(s);
        }
        if (pos.empty()) continue;
        total += stable_lse(den) - stable_lse(pos);
    }
    return total;
}

std::vector<SnapshotEntry<double>> random_snapshot(int64_t count, int64_t num_classes, int64_t dim,
                                                   RngState& rng) {
    std::vector<SnapshotEntry<double>> snap;
    for (int64_t i = 0; i < count; ++i) {
        SnapshotEntry<double> e;
        e.cls = static_cast<int64_t>(rng.below(static_cast<uint64_t>(num_classes)));
        e.image_id = 500 + i;
        for (int64_t c = 0; c < dim; ++c) e.vec.push_back(rng.normal());
        snap.push_back(std::move(e));
    }
    return snap;
}

} // namespace

TEST_CASE("projection head matches per-vector two-affine oracle") {
    ParamStore<double> store;
    RngState rng(301);
    auto head = make_projection_head<double>(store, rng, 5, 4, 3, Activation::Relu, false);

    SUBCASE("zero weights and biases give zero output in unnormalized mode") {
        for (auto& p : store.all()) std::fill(p->value.data.begin(), p->value.data.end(), 0.0);
        Tensor<double> x({2, 5});
        RngState gr(302);
        for (auto& v : x.data) v = gr.normal();
        auto out = project_rows(head, constant(std::move(x)));
        for (double v : out->value.data) CHECK(v == 0.0);
    }
    SUBCASE("identity affines are transparent on nonnegative input") {
        ParamStore<double> s2;
        RngState r2(303);
        auto h2 = make_projection_head<double>(s2, r2, 3, 3, 3, Activation::Relu, false);
        for (const char* n : {"proj.w1", "proj.w2"}) {
            auto w = s2.find(n);
            for (int64_t i = 0; i < 3; ++i)
                for (int64_t j = 0; j < 3; ++j) w->value.at(i, j) = i == j ? 1.0 : 0.0;
        }
        Tensor<double> x({4, 3});
        RngState gr(304);
        for (auto& v : x.data) v = std::abs(gr.normal());
        Tensor<double> keep(x);
        auto out = project_rows(h2, constant(std::move(x)));
        for (int64_t i = 0; i < keep.numel(); ++i) CHECK(out->value[i] == keep[i]);
    }
    SUBCASE("random input matches the composition oracle") {
        Tensor<double> x({3, 5});
        RngState gr(305);
        for (auto& v : x.data) v = gr.normal();
        auto out = project_rows(head, constant(Tensor<double>(x)));
        for (int64_t r = 0; r < 3; ++r) {
            std::vector<double> hvec(4, 0.0);
            for (int64_t j = 0; j < 4; ++j) {
                double acc = head.b1->value[j];
                for (int64_t c = 0; c < 5; ++c) acc += x.at(r, c) * head.w1->value.at(c, j);
                hvec[static_cast<size_t>(j)] = std::max(acc, 0.0);
            }
            for (int64_t j = 0; j < 3; ++j) {
                double acc = head.b2->value[j];
                for (int64_t c = 0; c < 4; ++c) acc += hvec[static_cast<size_t>(c)] * head.w2->value.at(c, j);
                CHECK(out->value.at(r, j) == doctest::Approx(acc).epsilon(1e-10));
            }
        }
    }
    SUBCASE("normalized mode emits unit rows and rejects zero rows") {
        ParamStore<double> s2;
        RngState r2(306);
        auto h2 = make_projection_head<double>(s2, r2, 5, 4, 3, Activation::Relu, true);
        Tensor<double> x({3, 5});
        RngState gr(307);
        for (auto& v : x.data) v = gr.normal();
        auto out = project_rows(h2, constant(std::move(x)));
        for (int64_t r = 0; r < 3; ++r) {
            double norm = 0.0;
            for (int64_t c = 0; c < 3; ++c) norm += out->value.at(r, c) * out->value.at(r, c);
            CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-12));
        }
        for (auto& p : s2.all()) std::fill(p->value.data.begin(), p->value.data.end(), 0.0);
        Tensor<double> z({1, 5});
        CHECK_THROWS_AS(project_rows(h2, constant(std::move(z))), DomainError);
    }
}

TEST_CASE("memory bank obeys FIFO semantics and capacity") {
    SUBCASE("all-zero targets leave the bank unchanged") {
        MemoryBank<double> bank(3, 4, 2);
        RngState rng(311);
        auto b = make_batch(2, 3, 2, rng, 0.0);
        bank.push(b);
        for (int64_t j = 0; j < 3; ++j) CHECK(bank.size(j) == 0);
        CHECK(bank.snapshot(10).empty());
    }
    SUBCASE("capacity two keeps the last two pushes in order") {
        MemoryBank<double> bank(1, 2, 1);
        for (int k = 0; k < 3; ++k) {
            ProjectedBatch<double> b;
            b.n = 1;
            b.num_classes = 1;
            b.x = constant(Tensor<double>({1, 1}, {static_cast<double>(k)}));
            b.y = {1};
            b.image_ids = {k};
            bank.push(b);
        }
        REQUIRE(bank.size(0) == 2);
        CHECK(bank.entries(0)[0].vec[0] == 1.0);
        CHECK(bank.entries(0)[1].vec[0] == 2.0);
        CHECK(bank.entries(0)[0].image_id == 1);
        CHECK(bank.entries(0)[1].image_id == 2);
    }
    SUBCASE("random run matches a scripted queue oracle and never exceeds capacity") {
        const int64_t classes = 4, cap = 5, dim = 3;
        MemoryBank<double> bank(classes, cap, dim);
        std::vector<std::deque<std::pair<std::vector<double>, int64_t>>> oracle(classes);
        RngState rng(312);
        int64_t next_image = 0;
        for (int iter = 0; iter < 250; ++iter) {
            const int64_t n = 1 + static_cast<int64_t>(rng.below(3));
            ProjectedBatch<double> b = make_batch(n, classes, dim, rng, 0.4);
            for (int64_t i = 0; i < n; ++i) b.image_ids[static_cast<size_t>(i)] = next_image + i;
            next_image += n;
            bank.push(b);
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < classes; ++j) {
                    if (!b.y[static_cast<size_t>(i * classes + j)]) continue;
                    oracle[static_cast<size_t>(j)].push_back({batch_row(b, i * classes + j),
                                                              b.image_ids[static_cast<size_t>(i)]});
                    if (static_cast<int64_t>(oracle[static_cast<size_t>(j)].size()) > cap)
                        oracle[static_cast<size_t>(j)].pop_front();
                }
            for (int64_t j = 0; j < classes; ++j) CHECK(bank.size(j) <= cap);
        }
        for (int64_t j = 0; j < classes; ++j) {
            REQUIRE(bank.size(j) == static_cast<int64_t>(oracle[static_cast<size_t>(j)].size()));
            for (size_t s = 0; s < oracle[static_cast<size_t>(j)].size(); ++s) {
                CHECK(bank.entries(j)[s].vec == oracle[static_cast<size_t>(j)][s].first);
                CHECK(bank.entries(j)[s].image_id == oracle[static_cast<size_t>(j)][s].second);
            }
        }
    }
}

TEST_CASE("bank snapshot returns the most recent entries overall") {
    MemoryBank<double> bank(2, 8, 1);
    auto push_one = [&](int64_t cls, double v, int64_t id) {
        ProjectedBatch<double> b;
        b.n = 1;
        b.num_classes = 2;
        b.x = constant(Tensor<double>({2, 1}, {v, v}));
        b.y = {static_cast<uint8_t>(cls == 0), static_cast<uint8_t>(cls == 1)};
        b.image_ids = {id};
        bank.push(b);
    };
    SUBCASE("fewer entries than the cap returns everything, most recent first") {
        push_one(0, 1.0, 10);
        push_one(1, 2.0, 11);
        push_one(0, 3.0, 12);
        auto snap = bank.snapshot(10);
        REQUIRE(snap.size() == 3);
        CHECK(snap[0].vec[0] == 3.0);
        CHECK(snap[0].cls == 0);
        CHECK(snap[1].vec[0] == 2.0);
        CHECK(snap[1].cls == 1);
        CHECK(snap[2].vec[0] == 1.0);
    }
    SUBCASE("cap truncates to the most recent subset") {
        for (int k = 0; k < 6; ++k) push_one(k % 2, static_cast<double>(k), 20 + k);
        auto snap = bank.snapshot(3);
        REQUIRE(snap.size() == 3);
        CHECK(snap[0].vec[0] == 5.0);
        CHECK(snap[1].vec[0] == 4.0);
        CHECK(snap[2].vec[0] == 3.0);
        CHECK(bank.snapshot(0).empty());
    }
}

TEST_CASE("sample-to-sample loss spot values") {
    SUBCASE("identical positive pair gives zero") {
        ProjectedBatch<double> b;
        b.n = 2;
        b.num_classes = 1;
        b.x = constant(Tensor<double>({2, 2}, {1.0, 0.0, 1.0, 0.0}));
        b.y = {1, 1};
        b.image_ids = {0, 1};
        auto loss = sscl_loss(b, {}, 1.0);
        CHECK(std::abs(loss->value[0]) < 1e-14);
    }
    SUBCASE("two aligned anchors plus an orthogonal singleton") {
        ProjectedBatch<double> b;
        b.n = 3;
        b.num_classes = 2;
        b.x = constant(Tensor<double>({6, 2}, {1.0, 0.0,   // image0 class0 (active)
                                               9.0, 9.0,   // image0 class1 (inactive)
                                               1.0, 0.0,   // image1 class0 (active)
                                               8.0, 8.0,   // image1 class1 (inactive)
                                               7.0, 7.0,   // image2 class0 (inactive)
                                               0.0, 1.0})); // image2 class1 (active)
        b.y = {1, 0, 1, 0, 0, 1};
        b.image_ids = {0, 1, 2};
        auto loss = sscl_loss(b, {}, 1.0);
        CHECK(loss->value[0] == doctest::Approx(2.0 * std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));
    }
    SUBCASE("all-zero targets give zero") {
        RngState rng(321);
        auto b = make_batch(3, 2, 4, rng, 0.0);
        auto loss = sscl_loss(b, {}, 0.5);
        CHECK(loss->value[0] == 0.0);
    }
    SUBCASE("non-positive temperature is rejected") {
        RngState rng(322);
        auto b = make_batch(2, 2, 3, rng);
        CHECK_THROWS_AS(sscl_loss(b, {}, 0.0), ParamError);
        CHECK_THROWS_AS(sscl_loss(b, {}, -1.0), ParamError);
    }
}

TEST_CASE("prototype-to-sample loss spot values") {
    auto one_proto = [](std::vector<double> vec) {
        PrototypeProjection<double> p;
        p.classes = {0};
        const int64_t width = static_cast<int64_t>(vec.size());
        p.cout = constant(Tensor<double>({1, width}, std::move(vec)));
        return p;
    };
    SUBCASE("one positive and one negative at equal similarity") {
        ProjectedBatch<double> b;
        b.n = 2;
        b.num_classes = 1;
        b.x = constant(Tensor<double>({2, 2}, {0.0, 1.0, 0.0, -1.0}));
        b.y = {1, 0};
        b.image_ids = {0, 1};
        auto loss = pscl_loss(one_proto({1.0, 0.0}), b, {}, 1.0);
        CHECK(loss->value[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("positives only gives zero") {
        ProjectedBatch<double> b;
        b.n = 2;
        b.num_classes = 1;
        b.x = constant(Tensor<double>({2, 2}, {0.3, 0.4, -0.2, 0.9}));
        b.y = {1, 1};
        b.image_ids = {0, 1};
        auto loss = pscl_loss(one_proto({1.0, 0.0}), b, {}, 1.0);
        CHECK(std::abs(loss->value[0]) < 1e-14);
    }
    SUBCASE("aligned positive versus orthogonal negative") {
        ProjectedBatch<double> b;
        b.n = 2;
        b.num_classes = 1;
        b.x = constant(Tensor<double>({2, 2}, {1.0, 0.0, 0.0, 1.0}));
        b.y = {1, 0};
        b.image_ids = {0, 1};
        auto loss = pscl_loss(one_proto({1.0, 0.0}), b, {}, 1.0);
        CHECK(loss->value[0] == doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));
    }
    SUBCASE("no defined prototypes gives zero") {
        RngState rng(331);
        auto b = make_batch(2, 3, 2, rng);
        PrototypeProjection<double> empty;
        auto loss = pscl_loss(empty, b, {}, 1.0);
        CHECK(loss->value[0] == 0.0);
    }
    SUBCASE("empty positive set for a class contributes zero") {
        ProjectedBatch<double> b;
        b.n = 2;
        b.num_classes = 1;
        b.x = constant(Tensor<double>({2, 2}, {1.0, 0.0, 0.0, 1.0}));
        b.y = {0, 0};
        b.image_ids = {0, 1};
        auto loss = pscl_loss(one_proto({1.0, 0.0}), b, {}, 1.0);
        CHECK(loss->value[0] == 0.0);
    }
    SUBCASE("non-positive temperature is rejected") {
        RngState rng(332);
        auto b = make_batch(2, 1, 2, rng);
        CHECK_THROWS_AS(pscl_loss(one_proto({1.0, 0.0}), b, {}, 0.0), ParamError);
    }
}

TEST_CASE("losses equal naive double-loop references on randomized instances") {
    for (int trial = 0; trial < 200; ++trial) {
        CAPTURE(trial);
        RngState rng(5000 + trial);
        const int64_t n = 1 + static_cast<int64_t>(rng.below(4));
        const int64_t num_classes = 1 + static_cast<int64_t>(rng.below(5));
        const int64_t dim = 2 + static_cast<int64_t>(rng.below(5));
        auto b = make_batch(n, num_classes, dim, rng, 0.45);
        auto snap = random_snapshot(static_cast<int64_t>(rng.below(7)), num_classes, dim, rng);
        const double tau = 0.07 + 0.5 * rng.uniform();

        auto s_loss = sscl_loss(b, snap, tau);
        CHECK(s_loss->value[0] == doctest::Approx(naive_sscl(b, snap, tau)).epsilon(1e-10));
        CHECK(s_loss->value[0] >= -1e-12); // non-negativity

        // Random subset of classes carries a prototype.
        std::vector<int64_t> classes;
        std::vector<std::vector<double>> protos;
        for (int64_t j = 0; j < num_classes; ++j) {
            if (rng.uniform() < 0.3) continue;
            std::vector<double> v;
            for (int64_t c = 0; c < dim; ++c) v.push_back(rng.normal());
            classes.push_back(j);
            protos.push_back(std::move(v));
        }
        PrototypeProjection<double> pp;
        pp.classes = classes;
        if (!classes.empty()) {
            Tensor<double> m({static_cast<int64_t>(classes.size()), dim});
            for (size_t r = 0; r < protos.size(); ++r)
                for (int64_t c = 0; c < dim; ++c) m.at(static_cast<int64_t>(r), c) = protos[r][static_cast<size_t>(c)];
            pp.cout = constant(std::move(m));
        }
        auto p_loss = pscl_loss(pp, b, snap, tau);
        CHECK(p_loss->value[0] == doctest::Approx(naive_pscl(protos, classes, b, snap, tau)).epsilon(1e-10));
        CHECK(p_loss->value[0] >= -1e-12);
    }
}

TEST_CASE("losses are invariant to the order of images in the batch") {
    for (int trial = 0; trial < 20; ++trial) {
        CAPTURE(trial);
        RngState rng(6000 + trial);
        const int64_t n = 2 + static_cast<int64_t>(rng.below(3));
        const int64_t num_classes = 1 + static_cast<int64_t>(rng.below(4));
        const int64_t dim = 3;
        auto b = make_batch(n, num_classes, dim, rng, 0.5);
        auto snap = random_snapshot(3, num_classes, dim, rng);

        // Reversed image order.
        ProjectedBatch<double> rev;
        rev.n = n;
        rev.num_classes = num_classes;
        Tensor<double> x({n * num_classes, dim});
        rev.y.resize(static_cast<size_t>(n * num_classes));
        for (int64_t i = 0; i < n; ++i) {
            const int64_t src = n - 1 - i;
            for (int64_t j = 0; j < num_classes; ++j) {
                rev.y[static_cast<size_t>(i * num_classes + j)] = b.y[static_cast<size_t>(src * num_classes + j)];
                for (int64_t c = 0; c < dim; ++c)
                    x.at(i * num_classes + j, c) = b.x->value.at(src * num_classes + j, c);
            }
            rev.image_ids.push_back(b.image_ids[static_cast<size_t>(src)]);
        }
        rev.x = constant(std::move(x));

        PrototypeProjection<double> pp;
        pp.classes = {0};
        Tensor<double> m({1, dim});
        for (int64_t c = 0; c < dim; ++c) m.at(0, c) = rng.normal();
        pp.cout = constant(std::move(m));

        CHECK(sscl_loss(b, snap, 0.2)->value[0] ==
              doctest::Approx(sscl_loss(rev, snap, 0.2)->value[0]).epsilon(1e-10));
        CHECK(pscl_loss(pp, b, snap, 0.2)->value[0] ==
              doctest::Approx(pscl_loss(pp, rev, snap, 0.2)->value[0]).epsilon(1e-10));
    }
}

TEST_CASE("loss gradients pass finite differences and ignore stored values") {
    const int64_t n = 3, num_classes = 3, d_in = 6, dim = 4;
    ParamStore<double> store;
    RngState rng(341);
    auto head = make_projection_head<double>(store, rng, d_in, 5, dim, Activation::Gelu, true);
    Tensor<double> raw({n * num_classes, d_in});
    for (auto& v : raw.data) v = rng.normal();
    auto features = store.add("features", std::move(raw));
    auto source = store.add("bank_source", [&] {
        Tensor<double> t({2, dim});
        for (auto& v : t.data) v = rng.normal();
        return t;
    }());

    std::vector<uint8_t> y;
    for (int64_t r = 0; r < n * num_classes; ++r) y.push_back(rng.uniform() < 0.5 ? 1 : 0);
    y[0] = 1; // ensure at least one anchor

    // Bank contents copied once from the source parameter's current values.
    std::vector<SnapshotEntry<double>> snap;
    for (int64_t r = 0; r < 2; ++r) {
        SnapshotEntry<double> e;
        e.cls = r;
        e.image_id = 900 + r;
        for (int64_t c = 0; c < dim; ++c) e.vec.push_back(source->value.at(r, c));
        snap.push_back(std::move(e));
    }
    PrototypeBank<double> bank(num_classes, d_in);
    {
        Tensor<double> scores = Tensor<double>::full({n, num_classes}, 0.9);
        bank.update(features->value, y, scores, n, 0.8);
    }
    REQUIRE(!bank.defined_classes().empty());

    auto make_loss = [&](bool with_sscl, bool with_pscl) {
        return [&, with_sscl, with_pscl]() {
            ProjectedBatch<double> b;
            b.n = n;
            b.num_classes = num_classes;
            b.x = project_rows(head, features);
            b.y = y;
            for (int64_t i = 0; i < n; ++i) b.image_ids.push_back(i);
            Var<double> total = constant(Tensor<double>::scalar(0.0));
            if (with_sscl) total = add(total, sscl_loss(b, snap, 0.3));
            if (with_pscl) total = add(total, pscl_loss(project_prototypes(head, bank), b, snap, 0.3));
            return total;
        };
    };

    SUBCASE("sample-to-sample gradients") {
        auto report = check_gradients<double>(make_loss(true, false), store.all(), 1e-4);
        CHECK(report.max_rel_err < 1e-4);
    }
    SUBCASE("prototype-to-sample gradients") {
        auto report = check_gradients<double>(make_loss(false, true), store.all(), 1e-4);
        CHECK(report.max_rel_err < 1e-4);
    }
    SUBCASE("stored bank vectors receive exactly zero gradient") {
        store.zero_grads();
        auto loss = make_loss(true, true)();
        backward(loss);
        for (double g : source->grad.data) CHECK(g == 0.0);
        bool any = false;
        for (double g : features->grad.data) any = any || g != 0.0;
        CHECK(any);
    }
}

TEST_CASE("prototype bank screening, means, and convexity") {
    SUBCASE("single qualifying vector becomes the prototype") {
        PrototypeBank<double> bank(2, 3);
        Tensor<double> f({2, 3}, {1.5, -2.0, 0.25, 9.0, 9.0, 9.0});
        Tensor<double> s({1, 2}, {0.95, 0.2});
        bank.update(f, {1, 1}, s, 1, 0.8);
        REQUIRE(bank.defined(0));
        CHECK_FALSE(bank.defined(1)); // screened out by low score
        auto p = bank.prototype(0);
        CHECK(p == std::vector<double>{1.5, -2.0, 0.25});
        CHECK(bank.count(0) == 1);
        CHECK(bank.count(1) == 0);
    }
    SUBCASE("two qualifying vectors average") {
        PrototypeBank<double> bank(1, 2);
        Tensor<double> f({2, 2}, {1.0, 3.0, 2.0, 5.0});
        Tensor<double> s({2, 1}, {0.9, 0.85});
        bank.update(f, {1, 1}, s, 2, 0.8);
        auto p = bank.prototype(0);
        CHECK(p[0] == doctest::Approx(1.5).epsilon(1e-15));
        CHECK(p[1] == doctest::Approx(4.0).epsilon(1e-15));
        CHECK(bank.count(0) == 2);
    }
    SUBCASE("inactive rows are excluded regardless of score") {
        PrototypeBank<double> bank(1, 2);
        Tensor<double> f({1, 2}, {1.0, 1.0});
        Tensor<double> s({1, 1}, {0.99});
        bank.update(f, {0}, s, 1, 0.8);
        CHECK_FALSE(bank.defined(0));
    }
    SUBCASE("randomized updates keep every coordinate inside the contributor envelope") {
        const int64_t classes = 3, dim = 4;
        PrototypeBank<double> bank(classes, dim);
        std::vector<std::vector<std::vector<double>>> contributors(classes);
        RngState rng(351);
        for (int iter = 0; iter < 1000; ++iter) {
            const int64_t n = 1 + static_cast<int64_t>(rng.below(2));
            Tensor<double> f({n * classes, dim});
            for (auto& v : f.data) v = rng.normal() * 10.0;
            Tensor<double> s({n, classes});
            std::vector<uint8_t> y;
            for (auto& v : s.data) v = rng.uniform();
            for (int64_t r = 0; r < n * classes; ++r) y.push_back(rng.uniform() < 0.5 ? 1 : 0);
            bank.update(f, y, s, n, 0.6);
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < classes; ++j)
                    if (y[static_cast<size_t>(i * classes + j)] && s.at(i, j) >= 0.6) {
                        std::vector<double> v;
                        for (int64_t c = 0; c < dim; ++c) v.push_back(f.at(i * classes + j, c));
                        contributors[static_cast<size_t>(j)].push_back(std::move(v));
                    }
        }
        for (int64_t j = 0; j < classes; ++j) {
            const auto& contrib = contributors[static_cast<size_t>(j)];
            REQUIRE(bank.count(j) == static_cast<int64_t>(contrib.size()));
            if (contrib.empty()) continue;
            auto p = bank.prototype(j);
            for (int64_t c = 0; c < dim; ++c) {
                double lo = contrib[0][static_cast<size_t>(c)], hi = lo;
                for (const auto& v : contrib) {
                    lo = std::min(lo, v[static_cast<size_t>(c)]);
                    hi = std::max(hi, v[static_cast<size_t>(c)]);
                }
                CHECK(p[static_cast<size_t>(c)] >= lo);
                CHECK(p[static_cast<size_t>(c)] <= hi);
            }
        }
    }
    SUBCASE("epoch reset retains the display copy and restarts accumulation") {
        PrototypeBank<double> bank(2, 2);
        Tensor<double> f({2, 2}, {1.0, 2.0, 9.0, 9.0});
        Tensor<double> s({1, 2}, {0.9, 0.1});
        bank.update(f, {1, 1}, s, 1, 0.8);
        bank.reset_epoch();
        CHECK_FALSE(bank.defined(0));
        auto row0 = bank.export_row(0);
        REQUIRE(row0.defined);
        CHECK(row0.values == std::vector<double>{1.0, 2.0});
        CHECK(row0.count == 1);
        CHECK_FALSE(bank.export_row(1).defined);

        Tensor<double> f2({2, 2}, {5.0, 6.0, 9.0, 9.0});
        bank.update(f2, {1, 1}, s, 1, 0.8);
        REQUIRE(bank.defined(0));
        CHECK(bank.export_row(0).values == std::vector<double>{5.0, 6.0});
    }
}

TEST_CASE("projected prototypes agree with batch projection of the same vector") {
    ParamStore<double> store;
    RngState rng(361);
    auto head = make_projection_head<double>(store, rng, 4, 5, 3, Activation::Relu, true);
    Tensor<double> v({1, 4});
    for (auto& x : v.data) x = rng.normal();

    PrototypeBank<double> bank(2, 4);
    Tensor<double> f({2, 4});
    for (int64_t c = 0; c < 4; ++c) {
        f.at(0, c) = v.at(0, c);
        f.at(1, c) = 99.0;
    }
    Tensor<double> s({1, 2}, {0.9, 0.0});
    bank.update(f, {1, 1}, s, 1, 0.8);

    auto protos = project_prototypes(head, bank);
    REQUIRE(protos.classes == std::vector<int64_t>{0});
    auto direct = project_rows(head, constant(std::move(v)));
    for (int64_t c = 0; c < 3; ++c)
        CHECK(protos.cout->value.at(0, c) == doctest::Approx(direct->value.at(0, c)).epsilon(1e-12));
}
