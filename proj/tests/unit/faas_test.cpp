#include <gtest/gtest.h>

#include <algorithm>

#include "psl/bench.hpp"
#include "psl/cluster.hpp"

using namespace psl;

namespace {

const Bytes kIdentity = to_bytes("fn:identity/test");

ClusterConfig attested(std::size_t workers) {
  ClusterConfig c;
  c.seed = 13;
  c.workers = workers;
  c.attest = true;
  auto reg = std::make_shared<HandlerRegistry>();
  (*reg)[digest(kIdentity)] = [](std::shared_ptr<Invocation> inv) { inv->finish(true, inv->input); };
  c.handlers = reg;
  return c;
}

std::pair<Digest, Digest> upload(Cluster& c, ByteView code, ByteView input) {
  std::optional<std::pair<Digest, Digest>> ids;
  c.user().upload(code, input, [&](Digest a, Digest b) { ids = {a, b}; });
  EXPECT_TRUE(c.run_until([&] { return ids.has_value(); }, c.sim().now() + 5 * kSeconds));
  return ids.value_or(std::pair<Digest, Digest>{});
}

std::optional<rpc::InvokeResult> invoke(Cluster& c, const Digest& code, const Digest& input) {
  std::optional<rpc::InvokeResult> out;
  c.user().invoke(code, input, [&](rpc::InvokeResult r) { out = r; });
  c.run_until([&] { return out.has_value(); }, c.sim().now() + 10 * kSeconds);
  return out;
}

std::optional<std::pair<bool, Bytes>> result(Cluster& c, const Digest& id) {
  std::optional<std::pair<bool, Bytes>> out;
  bool done = false;
  c.user().fetch_result(id, [&](std::optional<std::pair<bool, Bytes>> r) {
    out = std::move(r);
    done = true;
  });
  c.run_until([&] { return done; }, c.sim().now() + 5 * kSeconds);
  return out;
}

bool contains(ByteView hay, ByteView needle) {
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

}  // namespace

TEST(Faas, UploadOpensFromAnyAckedServer) {
  Cluster c(attested(1));
  ASSERT_TRUE(c.start());
  Bytes code = to_bytes("some code"), input = to_bytes("some input");
  auto [code_id, input_id] = upload(c, code, input);
  std::size_t holders = 0;
  for (std::size_t s = 0; s < c.server_count(); ++s) {
    auto env = c.server(s).retrieve_by_hash(code_id);
    if (!env) continue;
    ++holders;
    EXPECT_EQ(open(*env, c.keys()), code);
  }
  EXPECT_GE(holders, 2u);
  auto env = c.server(0).retrieve_by_hash(input_id);
  if (!env) env = c.server(1).retrieve_by_hash(input_id);
  ASSERT_TRUE(env.has_value());
  EXPECT_EQ(open(*env, c.keys()), input);
}

TEST(Faas, IdenticalUploadsShareIds) {
  Cluster c(attested(1));
  ASSERT_TRUE(c.start());
  auto a = upload(c, to_bytes("x"), to_bytes("y"));
  auto b = upload(c, to_bytes("x"), to_bytes("y"));
  EXPECT_EQ(a, b);
  EXPECT_NE(a.first, a.second);
  EXPECT_EQ(envelope_digest(c.user().seal_package(to_bytes("x"))), a.first);
}

TEST(Faas, IdentityRoundTrip) {
  Cluster c(attested(2));
  ASSERT_TRUE(c.start());
  Bytes input = to_bytes("echo me back");
  auto [code_id, input_id] = upload(c, kIdentity, input);
  auto r = invoke(c, code_id, input_id);
  ASSERT_TRUE(r.has_value());
  EXPECT_TRUE(r->ok);
  auto out = result(c, r->result_id);
  ASSERT_TRUE(out.has_value());
  EXPECT_TRUE(out->first);
  EXPECT_EQ(out->second, input);
}

TEST(Faas, UnknownCodeIdGivesErrorResult) {
  Cluster c(attested(1));
  ASSERT_TRUE(c.start());
  auto [code_id, input_id] = upload(c, kIdentity, to_bytes("in"));
  Digest bogus = digest(std::string_view("not uploaded"));
  auto r = invoke(c, bogus, input_id);
  ASSERT_TRUE(r.has_value());
  EXPECT_FALSE(r->ok);
  // Uploaded code with no registered handler fails the same way.
  auto [other, in2] = upload(c, to_bytes("fn:unregistered"), to_bytes("in"));
  r = invoke(c, other, in2);
  ASSERT_TRUE(r.has_value());
  EXPECT_FALSE(r->ok);
  auto out = result(c, r->result_id);
  ASSERT_TRUE(out.has_value());
  EXPECT_FALSE(out->first);
}

TEST(Faas, TamperedPackageRejectedAtWorker) {
  Cluster c(attested(1));
  ASSERT_TRUE(c.start());
  auto [code_id, input_id] = upload(c, kIdentity, to_bytes("payload"));
  // Rewrite the associated data on every copy; the ciphertext digest still
  // matches, so only the AEAD check can catch it.
  for (std::size_t s = 0; s < c.server_count(); ++s) {
    auto& store = c.server(s).block_store();
    auto rec = store.get(input_id);
    if (!rec) continue;
    StoredBlock b = decode_stored(*rec);
    b.envelope.ad.seq ^= 1;
    store.erase(input_id);
    store.put(input_id, encode_stored(b));
  }
  auto r = invoke(c, code_id, input_id);
  ASSERT_TRUE(r.has_value());
  EXPECT_FALSE(r->ok);
  EXPECT_GE(c.worker(0).stats().validity_drops, 1u);
}

TEST(Faas, BusyPoolQueuesInvocations) {
  Cluster c(attested(1));
  ASSERT_TRUE(c.start());
  auto [code_id, input_id] = upload(c, kIdentity, to_bytes("q"));
  int done = 0;
  for (int i = 0; i < 3; ++i) c.user().invoke(code_id, input_id, [&](rpc::InvokeResult r) { done += r.ok ? 1 : 0; });
  ASSERT_TRUE(c.run_until([&] { return done == 3; }, c.sim().now() + 10 * kSeconds));
  EXPECT_GE(c.manager().stats().queued, 1u);
  EXPECT_EQ(c.manager().stats().completed, 3u);
}

TEST(Faas, WrongCodeHashExcluded) {
  ClusterConfig cfg = attested(4);
  cfg.bad_workers = {1, 3};
  Cluster c(cfg);
  ASSERT_TRUE(c.start());
  EXPECT_EQ(c.manager().pool().size(), 2u);
  EXPECT_FALSE(c.worker(1).provisioned());
  EXPECT_FALSE(c.worker(3).provisioned());
  EXPECT_EQ(c.manager().stats().excluded, 2u);
}

// Scans every frame on the wire and every record on the storage servers for
// the raw key bytes.
TEST(Faas, AppKeysNeverOnWireOrOnServers) {
  Cluster c(attested(4));
  std::size_t frames = 0;
  bool leaked = false;
  const SymmetricKey enc = *c.keys().app_enc_key;
  const auto sign_seed = c.keys().app_sign_key->seed();
  c.sim().set_tap([&](NodeId, NodeId, const Bytes& f) {
    ++frames;
    leaked = leaked || contains(f, enc) || contains(f, sign_seed);
  });
  ASSERT_TRUE(c.start());
  EXPECT_EQ(c.manager().pool().size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_TRUE(c.worker(i).provisioned());
  auto [code_id, input_id] = upload(c, kIdentity, to_bytes("keys?"));
  ASSERT_TRUE(invoke(c, code_id, input_id).has_value());
  EXPECT_GT(frames, 0u);
  EXPECT_FALSE(leaked);
  for (std::size_t s = 0; s < c.server_count(); ++s) {
    EXPECT_TRUE(c.server(s).has_verify_key());
    c.server(s).block_store().scan([&](const Digest&, ByteView rec) {
      EXPECT_FALSE(contains(rec, enc));
      EXPECT_FALSE(contains(rec, sign_seed));
    });
  }
}

TEST(Faas, LockedCounterOnTwoWorkersIsExact) {
  auto r = bench::run_counter(3, 2, 10);
  ASSERT_TRUE(r.completed);
  EXPECT_EQ(r.final_value, 20u);
  EXPECT_TRUE(r.locks.ok);
  EXPECT_EQ(r.locks.grants, 20u);
  EXPECT_TRUE(r.verdict.ok());
}
