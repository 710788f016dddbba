# middleware package
