// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#include "pdot/util/endpoint.hpp"

#include <stdexcept>

namespace pdot::util {

Endpoint Endpoint::parse(std::string_view text) {
  auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon == 0 || colon + 1 >= text.size())
    throw std::invalid_argument("endpoint must be host:port, got '" + std::string(text) + "'");
  Endpoint ep;
  ep.host = std::string(text.substr(0, colon));
  unsigned long port = 0;
  for (char c : text.substr(colon + 1)) {
    if (c < '0' || c > '9') throw std::invalid_argument("endpoint port is not numeric");
    port = port * 10 + static_cast<unsigned long>(c - '0');
    if (port > 65535) throw std::invalid_argument("endpoint port out of range");
  }
  if (port == 0) throw std::invalid_argument("endpoint port must be nonzero");
  ep.port = static_cast<std::uint16_t>(port);
  return ep;
}

}  // namespace pdot::util
