#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "prime/pipeline.hpp"

namespace prime {

struct ServiceOptions {
  std::chrono::seconds session_ttl{std::chrono::hours(24)};
  std::optional<std::filesystem::path> static_dir;  // workbench bundle, served at /
  unsigned threads = 0;                              // training workers; 0 = hardware
  std::function<std::chrono::system_clock::time_point()> clock;  // defaults to system_clock::now
};

/// Session-scoped HTTP API over the workflow stages:
///   POST /sessions                         -> 201 {session_id}
///   GET  /sessions/{id}                    -> state
///   POST /sessions/{id}/filter             -> score summary + layer URLs
///   GET  /sessions/{id}/layers/{kind}      -> GeoJSON layer
///   GET  /sessions/{id}/scores             -> scores.csv
///   GET  /sessions/{id}/correlation        -> matrix + retained/removed
///   POST /sessions/{id}/prune              -> pruning report
///   POST /sessions/{id}/train              -> 202 job handle
///   GET  /sessions/{id}/results            -> 202 while running, then the bundle index
///   GET  /sessions/{id}/results/files/{p}  -> one bundle file, verbatim
class Service {
 public:
  Service(std::shared_ptr<const Datasets> data, ServiceOptions options = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and serves on a background thread; port 0 picks a free port.
  /// Returns the bound port.
  int start(const std::string& host, int port);
  /// Binds and serves on the calling thread until stop().
  bool serve(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace prime
