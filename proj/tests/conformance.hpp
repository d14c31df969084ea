#pragma once

// Manager-protocol checks shared by the unit suite and the acceptance binary.

#include <functional>
#include <map>
#include <string>

#include "teshu/algorithms.hpp"
#include "teshu/manager.hpp"

namespace conformance {

using namespace teshu;

// Test double that counts calls per worker before forwarding.
class CountingClient : public ManagerClient {
 public:
  explicit CountingClient(ManagerClient& inner) : inner_(inner) {}
  std::string get_template(WorkerId w, std::uint64_t s, const std::string& id) override {
    ++gets[w];
    return inner_.get_template(w, s, id);
  }
  void record_start(WorkerId w, std::uint64_t s, const std::string& id) override {
    ++starts[w];
    inner_.record_start(w, s, id);
  }
  void notify_start(WorkerId w, std::uint64_t s, const std::string& id) override {
    ++notifies[w];
    inner_.notify_start(w, s, id);
  }
  void record_end(WorkerId w, std::uint64_t s) override {
    ++ends[w];
    inner_.record_end(w, s);
  }
  std::map<WorkerId, WorkerProgress> progress(std::uint64_t s) override { return inner_.progress(s); }
  void install_template(const std::string& body) override { inner_.install_template(body); }

  static int total(const std::map<WorkerId, int>& m) {
    int t = 0;
    for (const auto& [_, n] : m) t += n;
    return t;
  }

  std::map<WorkerId, int> gets, starts, notifies, ends;

 private:
  ManagerClient& inner_;
};

namespace detail {
template <class E, class F>
bool throws(F&& f) {
  try {
    f();
  } catch (const E&) {
    return true;
  } catch (...) {
    return false;
  }
  return false;
}
}  // namespace detail

/// Behaviour every transport must show. `flush` drains fire-and-forget traffic.
/// Returns the failed checks, one per line; empty on success.
inline std::string run(ManagerClient& client, ShuffleManager& mgr, const std::function<void()>& flush) {
  std::string failures;
  auto check = [&](bool ok, const char* what) {
    if (!ok) failures += std::string(what) + "\n";
  };
  try {
    client.install_template(std::string(algorithms::kVanillaPush));
    check(mgr.has_template("vanilla_push"), "install stores the template");
    check(detail::throws<InvalidArgument>([&] {
            client.install_template("template broken\nmode push\nsender:\n  BOGUS\nreceiver:\n");
          }),
          "malformed template rejected");
    check(detail::throws<NotFound>([&] { client.get_template(0, 1, "missing"); }), "unknown id is not_found");

    auto body = client.get_template(3, 10, "vanilla_push");
    check(parse_template(body).id == "vanilla_push", "get_template returns the body");
    check(client.progress(10).at(3) == WorkerProgress::InFlight, "START marks in flight");
    check(detail::throws<ProtocolError>([&] { client.record_end(4, 10); }), "END without START rejected");
    client.record_end(3, 10);
    check(client.progress(10).at(3) == WorkerProgress::Done, "END marks done");
    check(detail::throws<ProtocolError>([&] { client.record_end(3, 10); }), "duplicate END rejected");
    check(detail::throws<ProtocolError>([&] { client.record_start(3, 10, "vanilla_push"); }),
          "duplicate START rejected");

    std::string changed(algorithms::kVanillaPush);
    changed.insert(0, "# revised\n");
    client.install_template(changed);
    check(client.get_template(5, 11, "vanilla_push") == changed, "reinstall replaces the body");

    // Cache-hit starts are fire-and-forget; a rejected one is logged, not raised.
    client.notify_start(6, 11, "vanilla_push");
    client.notify_start(6, 11, "vanilla_push");
    flush();
    client.record_end(5, 11);
    client.record_end(6, 11);
    auto p = client.progress(11);
    check(p.size() == 2 && p.at(6) == WorkerProgress::Done, "notified start is recorded once");
    check(mgr.check_invariants().empty(), "record invariants hold");
  } catch (const std::exception& e) {
    failures += std::string("unexpected exception: ") + e.what() + "\n";
  }
  return failures;
}

}  // namespace conformance
