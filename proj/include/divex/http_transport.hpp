// Copyright 2026 The divex Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include <httplib.h>

#include "divex/provider.hpp"

namespace divex {

/// Transport backed by cpp-httplib. Accepts http:// and https:// base URLs.
class HttplibTransport : public Transport {
 public:
  HttpResponse post(const HttpRequest& request) override {
    httplib::Client client(request.base_url);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(request.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(request.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());

    httplib::Headers headers;
    std::string content_type = "application/json";
    for (const auto& [k, v] : request.headers) {
      if (k == "Content-Type") content_type = v;
      else headers.emplace(k, v);
    }
    auto res = client.Post(request.path, headers, request.body, content_type);
    HttpResponse out;
    if (!res) {
      out.error = httplib::to_string(res.error());
      return out;
    }
    out.status = res->status;
    out.body = res->body;
    if (res->has_header("Retry-After")) {
      try {
        out.retry_after_seconds = std::stoi(res->get_header_value("Retry-After"));
      } catch (const std::exception&) {
      }
    }
    return out;
  }
};

}  // namespace divex
