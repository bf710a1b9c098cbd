#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "sslface/verification.hpp"

namespace sslface {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path data_root;
  std::filesystem::path model_path;
  std::filesystem::path store_path;
  /// When set, every request needs "Authorization: Bearer <token>" or
  /// ?token=<token> (for image URLs used directly by <img> tags).
  std::string token;
  unsigned threads = 0;
};

/// Stable id of a pair: FNV-1a over both paths and mirror flags, with the
/// occurrence number appended for repeated pairs.
std::string pair_id(const FacePair& pair, std::size_t occurrence = 0);

/// REST facade over active-learning sessions and verification.
///
///   POST /api/sessions                      create (Idempotency-Key honored)
///   GET  /api/sessions/{id}                 status
///   GET  /api/sessions/{id}/queries         pending batch
///   POST /api/sessions/{id}/labels          label some or all pending pairs
///   GET  /api/sessions/{id}/metrics         trace, JSON or CSV
///   GET  /api/pairs/{pid}/images/{a|b}      PNG the model sees
///   POST /api/verify                        multipart files a, b
///
/// Errors are application/problem+json with a machine-readable "reason".
class Service {
 public:
  /// Loads the model from config.model_path unless one is given, then
  /// restores persisted sessions from config.store_path.
  explicit Service(ServiceConfig config, std::shared_ptr<const VerificationModel> model = nullptr);
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds the listening socket; returns the port.
  int bind();
  /// Serves until stop(). Call bind() first.
  void run();
  void stop();

  /// Blocks until no session is retraining.
  void wait_idle();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace sslface
