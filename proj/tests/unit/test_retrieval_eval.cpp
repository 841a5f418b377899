#include <doctest.h>

#include <cmath>

#include <json.hpp>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "rvsl/errors.hpp"
#include "rvsl/experiments.hpp"
#include "rvsl/retrieval.hpp"

using namespace rvsl;
using eval::Role;

namespace {

eval::EmbeddingSet make_set(Tensor e, std::vector<std::uint32_t> ids, std::vector<Role> roles) {
  return {std::move(e), std::move(ids), std::move(roles)};
}

std::vector<std::uint32_t> ids_with(const eval::EmbeddingSet& s, Role r) {
  std::vector<std::uint32_t> out;
  for (std::size_t i = 0; i < s.ids.size(); ++i)
    if (s.roles[i] == r) out.push_back(s.ids[i]);
  return out;
}

}  // namespace

TEST_CASE("average precision examples") {
  CHECK(eval::average_precision({true}) == 1.0);
  CHECK(eval::average_precision({true, true, false}) == 1.0);
  CHECK(eval::average_precision({false, true}) == 0.5);
  CHECK(eval::average_precision({false, true, false, true}) == doctest::Approx((0.5 + 0.5) / 2).epsilon(1e-15));
  CHECK(eval::average_precision({true, false, true}) == doctest::Approx((1.0 + 2.0 / 3.0) / 2).epsilon(1e-15));
  CHECK_THROWS(eval::average_precision({false, false}));
  CHECK_THROWS(eval::average_precision({}));
}

TEST_CASE("perfect and worst rankings") {
  // Two identities on a line; each probe sits on its own gallery items.
  Tensor e({6, 1}, std::vector<double>{0, 0, 0.1, 10, 10, 10.1});
  const auto s = make_set(e, {1, 1, 1, 2, 2, 2}, {Role::probe, Role::gallery, Role::gallery, Role::probe,
                                                   Role::gallery, Role::gallery});
  const auto r = eval::evaluate(s, {1, 2});
  CHECK(r.mAP == 1.0);
  CHECK(r.cmc_at(1) == 1.0);
  CHECK(r.ranking[0] == std::vector<std::size_t>{0, 1, 2, 3});

  const auto swapped = make_set(e, {1, 2, 2, 2, 1, 1}, s.roles);
  const auto w = eval::evaluate(swapped);
  CHECK(w.cmc_at(1) == 0.0);
  CHECK(w.cmc_at(2) == 0.0);
  CHECK(w.cmc_at(3) == 1.0);
  CHECK(w.mAP == doctest::Approx((1.0 / 3 + 2.0 / 4) / 2).epsilon(1e-15));
  CHECK(w.cmc.size() == 10);
}

TEST_CASE("distance ties go to the lower gallery position") {
  Tensor e({4, 2}, 0.0);  // every distance is zero
  const auto s = make_set(e, {7, 3, 7, 3}, {Role::probe, Role::gallery, Role::gallery, Role::gallery});
  const auto r = eval::evaluate(s);
  CHECK(r.ranking[0] == std::vector<std::size_t>{0, 1, 2});
  CHECK(r.cmc_at(1) == 0.0);
  CHECK(r.cmc_at(2) == 1.0);
  CHECK(r.mAP == 0.5);
  const auto o = oracle::retrieval(eval::distance_matrix(s), {7}, {3, 7, 3}, 10);
  CHECK(o.mAP == r.mAP);
}

TEST_CASE("probes without a gallery match are excluded") {
  Tensor e({4, 1}, std::vector<double>{0, 1, 2, 3});
  const auto s = make_set(e, {1, 2, 1, 9}, {Role::probe, Role::probe, Role::gallery, Role::gallery});
  const auto r = eval::evaluate(s);
  CHECK(r.excluded_probes == 1);
  CHECK(r.mAP == 1.0);
  CHECK(r.probe_ids == std::vector<std::uint32_t>{1, 2});
}

TEST_CASE("retrieval metrics equal the brute-force oracle on every small gallery") {
  Rng rng(21);
  std::size_t tied_sets = 0;
  for (std::size_t G = 1; G <= 8; ++G) {
    for (int trial = 0; trial < 60; ++trial) {
      const std::size_t P = 1 + rng.below(4);
      const std::size_t n = P + G, D = 1 + rng.below(3);
      std::vector<std::uint32_t> ids;
      std::vector<Role> roles;
      for (std::size_t p = 0; p < P; ++p) {
        ids.push_back(static_cast<std::uint32_t>(p));
        roles.push_back(Role::probe);
      }
      for (std::size_t g = 0; g < G; ++g) {
        ids.push_back(static_cast<std::uint32_t>(rng.below(P + 1)));
        roles.push_back(Role::gallery);
      }
      // Integer coordinates on half the trials so that distances tie.
      const bool coarse = trial % 2 == 0;
      Tensor e({n, D});
      for (double& v : e.data()) v = coarse ? static_cast<double>(rng.below(3)) : rng.uniform(-1.0, 1.0);
      const auto s = make_set(e, ids, roles);
      const Tensor d = eval::distance_matrix(s);
      REQUIRE(d.shape() == Shape{P, G});
      for (std::size_t p = 0; p < P; ++p)
        for (std::size_t g = 0; g < G; ++g) REQUIRE(d.at({p, g}) == oracle::euclid(e, p, P + g));

      const auto probe_ids = ids_with(s, Role::probe), gallery_ids = ids_with(s, Role::gallery);
      const auto o = oracle::retrieval(d, probe_ids, gallery_ids, 10);
      if (o.excluded == P) {
        CHECK_NOTHROW(eval::evaluate(s));
        continue;
      }
      tied_sets += coarse;
      const auto r = eval::evaluate(s);
      CHECK(r.mAP == o.mAP);
      CHECK(r.excluded_probes == o.excluded);
      for (std::size_t k = 1; k <= 10; ++k) CHECK(r.cmc_at(k) == o.cmc[k - 1]);
    }
  }
  CHECK(tied_sets > 100);
}

TEST_CASE("cmc is monotone and bounded") {
  Rng rng(22);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::uint32_t> ids;
    std::vector<Role> roles;
    for (std::uint32_t p = 0; p < 5; ++p) {
      ids.push_back(p);
      roles.push_back(Role::probe);
      for (int v = 0; v < 3; ++v) {
        ids.push_back(p);
        roles.push_back(Role::gallery);
      }
    }
    const auto r = eval::evaluate(make_set(fixture::uniform({ids.size(), 4}, rng.next_u64()), ids, roles), {1, 5, 20});
    CHECK(r.cmc.size() == 20);
    for (std::size_t k = 1; k < r.cmc.size(); ++k) CHECK(r.cmc[k] >= r.cmc[k - 1]);
    CHECK(r.cmc.back() == 1.0);
    CHECK(r.mAP > 0.0);
    CHECK(r.mAP <= 1.0);
  }
}

TEST_CASE("evaluation rejects protocol violations") {
  Tensor e({3, 2}, 0.0);
  CHECK_THROWS_AS(eval::evaluate(make_set(e, {1, 1, 1}, {Role::probe, Role::probe, Role::gallery})), ProtocolError);
  CHECK_THROWS(eval::evaluate(make_set(e, {1, 1}, {Role::probe, Role::gallery})));
  CHECK_THROWS(eval::evaluate(make_set(e, {1, 1, 1}, {Role::gallery, Role::gallery, Role::gallery})));
  CHECK_THROWS(eval::evaluate(make_set(e, {1, 2, 1}, {Role::probe, Role::probe, Role::gallery}), {0, 1}));

  data::DatasetManifest m;
  m.records.push_back({1, "a", data::Domain::real_hazy, data::Split::probe, {}, {}});
  m.records.push_back({1, "b", data::Domain::real_hazy, data::Split::gallery, {}, {}});
  m.records.push_back({2, "c", data::Domain::real_clear, data::Split::train, {}, {}});
  CHECK_NOTHROW(eval::check_protocol(m));
  auto two = m;
  two.records.push_back({1, "d", data::Domain::real_hazy, data::Split::probe, {}, {}});
  CHECK_THROWS_AS(eval::check_protocol(two), ProtocolError);
  auto none = m;
  none.records.push_back({5, "e", data::Domain::real_hazy, data::Split::gallery, {}, {}});
  CHECK_THROWS_AS(eval::check_protocol(none), ProtocolError);
  auto clear_probe = m;
  clear_probe.records[0].domain = data::Domain::real_clear;
  CHECK_THROWS_AS(eval::check_protocol(clear_probe), ProtocolError);
}

TEST_CASE("report json") {
  Tensor e({3, 1}, std::vector<double>{0, 1, 2});
  const auto r = eval::evaluate(make_set(e, {4, 4, 5}, {Role::probe, Role::gallery, Role::gallery}), {1, 5});
  const auto j = nlohmann::json::parse(eval::to_json(r));
  CHECK(j["mAP"].get<double>() == 1.0);
  CHECK(j["cmc"]["1"].get<double>() == 1.0);
  CHECK(j["cmc"]["5"].get<double>() == 1.0);
  CHECK(j["excluded_probes"].get<int>() == 0);
  CHECK_FALSE(j.contains("ranking"));
  const auto jr = nlohmann::json::parse(eval::to_json(r, true));
  CHECK(jr["ranking"][0]["probe_id"].get<int>() == 4);
  CHECK(jr["ranking"][0]["gallery"] == nlohmann::json::array({0, 1}));
}

TEST_CASE("embeddings of a generated corpus") {
  RunConfig cfg = fixture::tiny_run();
  const data::Dataset ds = data::generate_dataset(cfg.data, 0);
  net::ModuleSet m = exp::build_for(cfg, ds);

  const auto probes = ds.select(data::Domain::real_hazy, data::Split::probe);
  const auto gallery = ds.select(data::Domain::real_hazy, data::Split::gallery);
  std::vector<std::size_t> idx = probes;
  idx.insert(idx.end(), gallery.begin(), gallery.end());
  const auto set = eval::extract_embeddings(m, ds, idx);
  CHECK(set.embeddings.shape() == Shape{idx.size(), 8});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const data::Sample& s = ds.samples[idx[r]];
    CHECK(set.ids[r] == s.identity);
    CHECK(set.roles[r] == (s.split == data::Split::probe ? Role::probe : Role::gallery));
    std::vector<Tensor> one{s.image};
    const Tensor alone = net::embed(m, stack(one), true);
    for (std::size_t k = 0; k < 8; ++k) CHECK(std::abs(alone[k] - set.embeddings.at({r, k})) < 1e-12);
  }
  const auto rep = eval::evaluate_domain(m, ds, true);
  CHECK(rep.probe_ids.size() == 3);
  CHECK(rep.excluded_probes == 0);
  CHECK_THROWS_AS(eval::extract_embeddings(m, ds, ds.select(data::Domain::real_hazy, data::Split::train)),
                  ProtocolError);
  CHECK_THROWS(eval::evaluate_domain(m, ds, false));  // no synthetic eval identities by default
}
