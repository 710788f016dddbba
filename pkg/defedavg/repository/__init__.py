# repository package
