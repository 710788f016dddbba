# defedavg package
